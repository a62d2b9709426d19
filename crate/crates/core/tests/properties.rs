use std::collections::BTreeMap;
use std::sync::Arc;

use phygraph::bench::{aggregate_seeds, average_rank, MetricRow, RankEntry, Variant};
use phygraph::graph_ops::{
    build_neighbor_index, normalized_adjacency, spatial_derivative, weighted_spatial_derivative,
    GraphContext,
};
use phygraph::models::{init_forecaster, ModelKind};
use phygraph::physics::{residual_values, LienardParams, LwrParams, PhysicsSpec};
use phygraph::temporal_graph::{DatasetFile, GraphSnapshot, Partition, TemporalDataset, Topology};
use phygraph::trainer::{mae, mse};
use proptest::prelude::*;
use proptest::sample::subsequence;

/// Random graph: node count, directedness, distinct non-loop edges with
/// positive distances.
fn graph() -> impl Strategy<Value = Topology> {
    (2usize..9, any::<bool>()).prop_flat_map(|(n, directed)| {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && (directed || i < j))
            .collect();
        let max = pairs.len();
        subsequence(pairs, 0..=max).prop_flat_map(move |edges| {
            let m = edges.len();
            prop::collection::vec(0.25f64..4.0, m).prop_map(move |attrs| {
                Topology::new(n, directed, edges.clone(), Some(attrs)).unwrap()
            })
        })
    })
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn graph_and_field() -> impl Strategy<Value = (Topology, Vec<f64>)> {
    graph().prop_flat_map(|t| {
        let n = t.node_count();
        (Just(t), field(n))
    })
}

fn graph_field_perm() -> impl Strategy<Value = (Topology, Vec<f64>, Vec<usize>)> {
    graph_and_field().prop_flat_map(|(t, f)| {
        let n = t.node_count();
        (Just(t), Just(f), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

/// Neighbor map built straight from the edge list: union of in and out
/// edges, the outgoing distance taking precedence.
fn brute_neighbors(t: &Topology) -> Vec<BTreeMap<usize, f64>> {
    let mut nb = vec![BTreeMap::new(); t.node_count()];
    for (&(s, d), &w) in t.edges().iter().zip(t.edge_attrs()) {
        nb[s].insert(d, w);
    }
    for (&(s, d), &w) in t.edges().iter().zip(t.edge_attrs()) {
        nb[d].entry(s).or_insert(w);
    }
    nb
}

fn permute<T: Copy + Default>(v: &[T], perm: &[usize]) -> Vec<T> {
    let mut out = vec![T::default(); v.len()];
    for (i, &x) in v.iter().enumerate() {
        out[perm[i]] = x;
    }
    out
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivative_matches_brute_force((t, f) in graph_and_field()) {
        let idx = build_neighbor_index(&t);
        let nb = brute_neighbors(&t);
        let plain: Vec<f64> = (0..t.node_count())
            .map(|i| {
                if nb[i].is_empty() {
                    return 0.0;
                }
                let s: f64 = nb[i].keys().map(|&j| f[i] - f[j]).sum();
                s / nb[i].len() as f64
            })
            .collect();
        let weighted: Vec<f64> = (0..t.node_count())
            .map(|i| {
                if nb[i].is_empty() {
                    return 0.0;
                }
                let s: f64 = nb[i].iter().map(|(&j, &d)| (f[i] - f[j]) / d).sum();
                s / nb[i].len() as f64
            })
            .collect();
        prop_assert_eq!(spatial_derivative(&f, &idx), plain);
        prop_assert_eq!(weighted_spatial_derivative(&f, &idx), weighted);
    }

    #[test]
    fn constant_field_has_zero_derivative(t in graph(), c in -5.0f64..5.0) {
        let idx = build_neighbor_index(&t);
        let f = vec![c; t.node_count()];
        prop_assert!(spatial_derivative(&f, &idx).iter().all(|&v| v == 0.0));
        prop_assert!(weighted_spatial_derivative(&f, &idx).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjacency_is_permutation_equivariant((t, _f, perm) in graph_field_perm()) {
        let a = normalized_adjacency(&t);
        let b = normalized_adjacency(&t.permuted(&perm));
        let n = t.node_count();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a.get(i, j), b.get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn residuals_are_permutation_equivariant(
        (t, x, perm) in graph_field_perm(),
        shift in -0.3f64..0.3,
    ) {
        let n = t.node_count();
        let p1: Vec<f64> = x.iter().map(|v| 0.5 * v + shift).collect();
        let p2: Vec<f64> = p1.iter().map(|v| 0.9 * v - shift).collect();
        let (g, gp) = (GraphContext::new(&t), GraphContext::new(&t.permuted(&perm)));
        let specs = [
            PhysicsSpec::lienard(LienardParams::default(), 1.0).unwrap(),
            PhysicsSpec::lwr(LwrParams { v_max: 1.0, p_max: 2.0 }, 1.0).unwrap(),
        ];
        for spec in &specs {
            let r = residual_values(spec, &x, &p1, &p2, &g).unwrap();
            let rp = residual_values(
                spec,
                &permute(&x, &perm),
                &permute(&p1, &perm),
                &permute(&p2, &perm),
                &gp,
            )
            .unwrap();
            prop_assert_eq!(rp.len(), n);
            prop_assert!(close(&rp, &permute(&r, &perm), 1e-12));
        }
    }

    #[test]
    fn forecasters_are_permutation_equivariant(
        (t, _f, perm) in graph_field_perm(),
        feats in prop::collection::vec(-1.0f64..1.0, 8 * 3),
        seed in 0u64..1000,
    ) {
        let n = t.node_count();
        let lags = 3;
        let s = GraphSnapshot::new(
            feats[..n * lags].to_vec(),
            lags,
            Arc::new(t),
            vec![0.0; n],
        )
        .unwrap();
        let sp = s.permuted(&perm);
        for kind in ModelKind::ALL {
            let m = init_forecaster(kind, lags, 5, seed).unwrap();
            let y = m.predict_values(&s).unwrap();
            let yp = m.predict_values(&sp).unwrap();
            prop_assert_eq!(y.len(), n);
            prop_assert!(close(&yp, &permute(&y, &perm), 1e-12), "{kind}");
        }
    }

    #[test]
    fn dataset_windows_split_and_scale(
        n in 1usize..5,
        lags in 1usize..4,
        t_extra in 3usize..20,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let t = lags + t_extra;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let series: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..n).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let file = DatasetFile {
            name: "p".into(),
            directed: false,
            node_count: n,
            edges: (1..n).map(|i| [i - 1, i]).collect(),
            edge_attrs: None,
            dynamic_edges: None,
            dynamic_edge_attrs: None,
            series: series.clone(),
        };
        let ds = TemporalDataset::from_file(file, lags, 0.8).unwrap();
        let count = t - lags;
        prop_assert_eq!(ds.snapshots().len(), count);
        prop_assert_eq!(ds.split_index(), (0.8 * count as f64).floor() as usize);
        prop_assert_eq!(ds.train().len() + ds.test().len(), count);

        let stats = ds.stats();
        for (k, s) in ds.snapshots().iter().enumerate() {
            for node in 0..n {
                for j in 0..lags {
                    prop_assert_eq!(s.features()[node * lags + j], stats.apply(series[k + j][node]));
                }
                prop_assert_eq!(s.target()[node], stats.apply(series[k + lags][node]));
            }
        }

        let train_rows = ds.split_index() + lags;
        let z: Vec<f64> = series[..train_rows]
            .iter()
            .flatten()
            .map(|&v| stats.apply(v))
            .collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((sd - 1.0).abs() < 1e-10);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        ds.save(&path).unwrap();
        let back = phygraph::temporal_graph::load_dataset_with(&path, lags, 0.8).unwrap();
        prop_assert_eq!(back.snapshots(), ds.snapshots());
        prop_assert_eq!(back.partition(Partition::Test), ds.partition(Partition::Test));
    }

    #[test]
    fn mae_squared_bounded_by_mse(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50),
    ) {
        let (y, yh): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = mae(&y, &yh);
        prop_assert!(a * a <= mse(&y, &yh) * (1.0 + 1e-12));
    }

    #[test]
    fn ranks_survive_monotone_transforms(
        values in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 3..6),
    ) {
        let entries: Vec<RankEntry> = values
            .iter()
            .enumerate()
            .flat_map(|(e, &(a, b))| {
                [("d1", a, b), ("d2", b, a)].map(|(d, mae, mse)| RankEntry {
                    entity: format!("m{e}"),
                    dataset: d.into(),
                    mae,
                    mse,
                })
            })
            .collect();
        let mapped: Vec<RankEntry> = entries
            .iter()
            .map(|r| RankEntry { mae: r.mae.ln() * 3.0 + 1.0, mse: r.mse.powi(3), ..r.clone() })
            .collect();
        let (a, b) = (average_rank(&entries).unwrap(), average_rank(&mapped).unwrap());
        prop_assert_eq!(&a.ranks, &b.ranks);
        for col in 0..a.columns.len() {
            let mut ranks: Vec<f64> = a.ranks.iter().map(|r| r[col]).collect();
            let m = ranks.len() as f64;
            prop_assert_eq!(ranks.iter().sum::<f64>(), m * (m + 1.0) / 2.0);
            ranks.sort_by(f64::total_cmp);
            prop_assert!(ranks[0] >= 1.0 && ranks[ranks.len() - 1] <= m);
        }
        prop_assert_eq!(a.to_markdown(), average_rank(&entries).unwrap().to_markdown());
    }

    #[test]
    fn seed_median_is_order_independent(
        maes in prop::collection::vec(0.0f64..3.0, 1..7),
        order in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let rows: Vec<MetricRow> = maes
            .iter()
            .enumerate()
            .map(|(i, &m)| MetricRow {
                model: "gcn".into(),
                dataset: "d".into(),
                variant: if i % 2 == 0 { Variant::Baseline } else { Variant::Phynn },
                seed: i as u64 / 2,
                mae: m,
                mse: m * m,
                phy_residual: None,
                train_seconds: 0.0,
            })
            .collect();
        let shuffled: Vec<MetricRow> = order
            .iter()
            .filter(|&&i| i < rows.len())
            .map(|&i| rows[i].clone())
            .collect();
        prop_assert_eq!(aggregate_seeds(&rows), aggregate_seeds(&shuffled));
    }
}
