//! Neighborhood structure, GCN adjacency normalization, and the discrete
//! spatial derivative on node signals.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::SparseMatrix;
use crate::temporal_graph::Topology;

/// Per-node neighbor lists with distances, sorted by neighbor id.
///
/// Directed topologies use the union of in- and out-neighbors. Self-loops
/// are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborIndex {
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// `N_i`, the number of distinct neighbors of `i`.
    pub fn cardinality(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Sparse form of the neighbor-mean difference operator, optionally
    /// dividing each difference by its edge distance.
    pub fn derivative_operator(&self, distance_weighted: bool) -> SparseMatrix {
        let n = self.node_count();
        let rows = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                if nbrs.is_empty() {
                    return Vec::new();
                }
                let inv = 1.0 / nbrs.len() as f64;
                let mut row = Vec::with_capacity(nbrs.len() + 1);
                let mut diag = 0.0;
                for &(j, d) in nbrs {
                    let w = if distance_weighted { inv / d } else { inv };
                    diag += w;
                    row.push((j, -w));
                }
                row.push((i, diag));
                row
            })
            .collect();
        SparseMatrix::from_rows(n, rows)
    }
}

pub fn build_neighbor_index(topo: &Topology) -> NeighborIndex {
    let n = topo.node_count();
    // Outgoing attrs take precedence over incoming ones for the same pair.
    let mut outgoing: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut incoming: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (&(s, d), &w) in topo.edges().iter().zip(topo.edge_attrs()) {
        if s == d {
            continue;
        }
        outgoing[s].insert(d, w);
        if topo.is_directed() {
            incoming[d].insert(s, w);
        } else {
            outgoing[d].entry(s).or_insert(w);
        }
    }
    let neighbors = outgoing
        .into_iter()
        .zip(incoming)
        .map(|(mut out, inc)| {
            for (j, w) in inc {
                out.entry(j).or_insert(w);
            }
            out.into_iter().collect()
        })
        .collect();
    NeighborIndex { neighbors }
}

/// `(1/N_i) Σ_{j∈N(i)} (f(i) − f(j))`; isolated nodes get 0.
pub fn spatial_derivative(f: &[f64], idx: &NeighborIndex) -> Vec<f64> {
    neighbor_mean_difference(f, idx, false)
}

/// `(1/N_i) Σ_{j∈N(i)} (f(i) − f(j)) / d_ij`; isolated nodes get 0.
pub fn weighted_spatial_derivative(f: &[f64], idx: &NeighborIndex) -> Vec<f64> {
    neighbor_mean_difference(f, idx, true)
}

fn neighbor_mean_difference(f: &[f64], idx: &NeighborIndex, weighted: bool) -> Vec<f64> {
    assert_eq!(f.len(), idx.node_count(), "signal length must equal node count");
    (0..f.len())
        .map(|i| {
            let nbrs = idx.neighbors(i);
            if nbrs.is_empty() {
                return 0.0;
            }
            let mut acc = 0.0;
            for &(j, d) in nbrs {
                let diff = f[i] - f[j];
                acc += if weighted { diff / d } else { diff };
            }
            acc / nbrs.len() as f64
        })
        .collect()
}

/// Dense `D̃^{-1/2}(A + I)D̃^{-1/2}` over the symmetrized binary adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let rows = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter_map(|j| {
                        let v = self.get(i, j);
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        SparseMatrix::from_rows(self.n, rows)
    }
}

pub fn normalized_adjacency(topo: &Topology) -> NormalizedAdjacency {
    let n = topo.node_count();
    let mut a = vec![false; n * n];
    for i in 0..n {
        a[i * n + i] = true;
    }
    for &(s, d) in topo.edges() {
        a[s * n + d] = true;
        a[d * n + s] = true;
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().filter(|&&x| x).count() as f64)
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j] {
                values[i * n + j] = 1.0 / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    NormalizedAdjacency { n, values }
}

/// Derived structures for one topology, computed once and shared by every
/// model and residual that runs on it.
#[derive(Debug)]
pub struct GraphContext {
    pub neighbors: NeighborIndex,
    pub adjacency: Arc<SparseMatrix>,
    /// Row i marks `N(i) ∪ {i}`, row-major `N × N`.
    pub attention_mask: Arc<Vec<bool>>,
    pub derivative: Arc<SparseMatrix>,
    pub weighted_derivative: Arc<SparseMatrix>,
}

impl GraphContext {
    pub fn new(topo: &Topology) -> Self {
        let neighbors = build_neighbor_index(topo);
        let n = topo.node_count();
        let mut mask = vec![false; n * n];
        for i in 0..n {
            mask[i * n + i] = true;
            for &(j, _) in neighbors.neighbors(i) {
                mask[i * n + j] = true;
            }
        }
        Self {
            adjacency: Arc::new(normalized_adjacency(topo).to_sparse()),
            attention_mask: Arc::new(mask),
            derivative: Arc::new(neighbors.derivative_operator(false)),
            weighted_derivative: Arc::new(neighbors.derivative_operator(true)),
            neighbors,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::new(3, false, vec![(0, 1), (1, 2)], None).unwrap()
    }

    #[test]
    fn path_neighbors() {
        let idx = build_neighbor_index(&path3());
        assert_eq!(idx.neighbors(0), &[(1, 1.0)]);
        assert_eq!(idx.neighbors(1), &[(0, 1.0), (2, 1.0)]);
        assert_eq!(idx.neighbors(2), &[(1, 1.0)]);
        let card: Vec<_> = (0..3).map(|i| idx.cardinality(i)).collect();
        assert_eq!(card, vec![1, 2, 1]);
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let topo = Topology::new(3, false, vec![(0, 1)], None).unwrap();
        let idx = build_neighbor_index(&topo);
        assert_eq!(idx.cardinality(2), 0);
        assert_eq!(spatial_derivative(&[1.0, 5.0, 7.0], &idx)[2], 0.0);
    }

    #[test]
    fn directed_union() {
        let topo = Topology::new(2, true, vec![(0, 1)], Some(vec![2.5])).unwrap();
        let idx = build_neighbor_index(&topo);
        assert_eq!(idx.neighbors(0), &[(1, 2.5)]);
        assert_eq!(idx.neighbors(1), &[(0, 2.5)]);
    }

    #[test]
    fn directed_pair_prefers_outgoing_attr() {
        let topo = Topology::new(2, true, vec![(0, 1), (1, 0)], Some(vec![2.0, 3.0])).unwrap();
        let idx = build_neighbor_index(&topo);
        assert_eq!(idx.neighbors(0), &[(1, 2.0)]);
        assert_eq!(idx.neighbors(1), &[(0, 3.0)]);
    }

    #[test]
    fn self_loops_excluded() {
        let topo = Topology::new(2, false, vec![(0, 0), (0, 1)], None).unwrap();
        let idx = build_neighbor_index(&topo);
        assert_eq!(idx.neighbors(0), &[(1, 1.0)]);
    }

    #[test]
    fn derivative_on_path() {
        let idx = build_neighbor_index(&path3());
        assert_eq!(spatial_derivative(&[1.0, 2.0, 3.0], &idx), vec![-1.0, 0.0, 1.0]);
        assert_eq!(spatial_derivative(&[4.0; 3], &idx), vec![0.0; 3]);
    }

    #[test]
    fn weighted_derivative_divides_by_distance() {
        let topo = Topology::new(3, false, vec![(0, 1), (1, 2)], Some(vec![2.0, 0.5])).unwrap();
        let idx = build_neighbor_index(&topo);
        let d = weighted_spatial_derivative(&[1.0, 2.0, 3.0], &idx);
        assert_eq!(d, vec![-0.5, 0.5 * (0.5 - 2.0), 2.0]);
    }

    #[test]
    fn sparse_operator_matches_function() {
        let topo = Topology::new(4, true, vec![(0, 1), (2, 1), (3, 0)], Some(vec![1.5, 0.7, 2.0]))
            .unwrap();
        let idx = build_neighbor_index(&topo);
        let f = [0.3, -1.0, 2.2, 0.9];
        for weighted in [false, true] {
            let via_op = idx.derivative_operator(weighted).apply(&f, 1);
            let direct = neighbor_mean_difference(&f, &idx, weighted);
            for (a, b) in via_op.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_node_adjacency() {
        let topo = Topology::new(1, false, vec![], None).unwrap();
        assert_eq!(normalized_adjacency(&topo).as_slice(), &[1.0]);
    }

    #[test]
    fn two_node_adjacency() {
        let topo = Topology::new(2, false, vec![(0, 1)], None).unwrap();
        let a = normalized_adjacency(&topo);
        for v in a.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn adjacency_symmetric_with_degree_eigenvector() {
        let topo = Topology::new(4, false, vec![(0, 1), (1, 2), (1, 3)], None).unwrap();
        let a = normalized_adjacency(&topo);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
        // √d̃ is a fixed point; constants are only preserved on regular graphs.
        let sqrt_deg = [2f64.sqrt(), 2.0, 2f64.sqrt(), 2f64.sqrt()];
        let out = a.to_sparse().apply(&sqrt_deg, 1);
        for (o, e) in out.iter().zip(&sqrt_deg) {
            assert!((o - e).abs() < 1e-14);
        }
    }

    #[test]
    fn regular_graph_preserves_constants() {
        let ring = Topology::new(5, false, (0..5).map(|i| (i, (i + 1) % 5)).collect(), None).unwrap();
        let out = normalized_adjacency(&ring).to_sparse().apply(&[1.0; 5], 1);
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn directed_adjacency_is_symmetrized() {
        let topo = Topology::new(2, true, vec![(0, 1)], None).unwrap();
        let a = normalized_adjacency(&topo);
        assert_eq!(a.get(0, 1), a.get(1, 0));
        assert!(a.get(0, 1) > 0.0);
    }
}
