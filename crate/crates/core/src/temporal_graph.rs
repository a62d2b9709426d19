//! Temporal graph datasets: topology, lag-windowed snapshots, training-split
//! standardization and the on-disk JSON schema.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::graph_ops::GraphContext;

pub const DEFAULT_SPLIT: f64 = 0.8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("series has zero variance over the training rows")]
    ZeroVariance,
    #[error("series length {len} is too short for {lags} lags (need more than {})", lags + 2)]
    TooShort { len: usize, lags: usize },
    #[error("{partition} partition has {size} snapshots, need at least {needed}")]
    PartitionTooSmall {
        partition: Partition,
        size: usize,
        needed: usize,
    },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> DataError {
    DataError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Graph structure with positive edge distances.
pub struct Topology {
    node_count: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    edge_attrs: Vec<f64>,
    context: OnceLock<GraphContext>,
}

impl Topology {
    /// Missing `edge_attrs` default to distance 1 for every edge.
    pub fn new(
        node_count: usize,
        directed: bool,
        edges: Vec<(usize, usize)>,
        edge_attrs: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let edge_attrs = edge_attrs.unwrap_or_else(|| vec![1.0; edges.len()]);
        if edge_attrs.len() != edges.len() {
            return Err(invalid(
                "edge_attrs",
                format!("{} attrs for {} edges", edge_attrs.len(), edges.len()),
            ));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for (k, &(s, d)) in edges.iter().enumerate() {
            if s >= node_count || d >= node_count {
                return Err(invalid(
                    format!("edges[{k}]"),
                    format!("({s}, {d}) out of range for {node_count} nodes"),
                ));
            }
            if !seen.insert((s, d)) {
                return Err(invalid(format!("edges[{k}]"), format!("duplicate edge ({s}, {d})")));
            }
        }
        if let Some(k) = edge_attrs.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid(
                format!("edge_attrs[{k}]"),
                format!("distance must be positive, got {}", edge_attrs[k]),
            ));
        }
        Ok(Self {
            node_count,
            directed,
            edges,
            edge_attrs,
            context: OnceLock::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_attrs(&self) -> &[f64] {
        &self.edge_attrs
    }

    pub fn context(&self) -> &GraphContext {
        self.context.get_or_init(|| GraphContext::new(self))
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.node_count);
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        Self::new(self.node_count, self.directed, edges, Some(self.edge_attrs.clone()))
            .expect("relabeling preserves validity")
    }
}

impl Clone for Topology {
    fn clone(&self) -> Self {
        Self {
            node_count: self.node_count,
            directed: self.directed,
            edges: self.edges.clone(),
            edge_attrs: self.edge_attrs.clone(),
            context: OnceLock::new(),
        }
    }
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count
            && self.directed == other.directed
            && self.edges == other.edges
            && self.edge_attrs == other.edge_attrs
    }
}

impl fmt::Debug for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Topology")
            .field("node_count", &self.node_count)
            .field("directed", &self.directed)
            .field("edges", &self.edges.len())
            .finish()
    }
}

/// One timestep: `N × F` lag features (last column most recent), the
/// topology in force, and the next-step target.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    features: Vec<f64>,
    lags: usize,
    topology: Arc<Topology>,
    target: Vec<f64>,
}

impl GraphSnapshot {
    pub fn new(
        features: Vec<f64>,
        lags: usize,
        topology: Arc<Topology>,
        target: Vec<f64>,
    ) -> Result<Self, DataError> {
        let n = topology.node_count();
        if lags == 0 || features.len() != n * lags {
            return Err(invalid(
                "features",
                format!("expected {n}×{lags} values, got {}", features.len()),
            ));
        }
        if target.len() != n {
            return Err(invalid("target", format!("expected {n} values, got {}", target.len())));
        }
        Ok(Self {
            features,
            lags,
            topology,
            target,
        })
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    /// Row-major `N × F`.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_tensor(&self) -> Tensor {
        Tensor::matrix(self.node_count(), self.lags, self.features.clone())
            .expect("snapshot features are finite")
    }

    /// Lag column `k` (0 = oldest).
    pub fn lag_column(&self, k: usize) -> Vec<f64> {
        self.features.chunks(self.lags).map(|row| row[k]).collect()
    }

    /// `x_t`, the most recent observation per node.
    pub fn last_observation(&self) -> Vec<f64> {
        self.lag_column(self.lags - 1)
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    /// Moves node `i` to `perm[i]`, relabeling the topology to match.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        let mut features = vec![0.0; self.features.len()];
        let mut target = vec![0.0; n];
        for i in 0..n {
            let p = perm[i];
            features[p * self.lags..(p + 1) * self.lags]
                .copy_from_slice(&self.features[i * self.lags..(i + 1) * self.lags]);
            target[p] = self.target[i];
        }
        Self {
            features,
            lags: self.lags,
            topology: Arc::new(self.topology.permuted(perm)),
            target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// On-disk dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub name: String,
    pub directed: bool,
    pub node_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_attrs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_edges: Option<Vec<Vec<[usize; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_edge_attrs: Option<Vec<Vec<f64>>>,
    /// `T` rows × `N` columns.
    pub series: Vec<Vec<f64>>,
}

impl DatasetFile {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// One topology per series row.
    fn topologies(&self) -> Result<Vec<Arc<Topology>>, DataError> {
        let t = self.series.len();
        let to_pairs = |e: &[[usize; 2]]| e.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>();
        match &self.dynamic_edges {
            None => {
                if self.dynamic_edge_attrs.is_some() {
                    return Err(invalid("dynamic_edge_attrs", "given without dynamic_edges"));
                }
                let topo = Topology::new(
                    self.node_count,
                    self.directed,
                    to_pairs(&self.edges),
                    self.edge_attrs.clone(),
                )?;
                Ok(vec![Arc::new(topo); t])
            }
            Some(dynamic) => {
                if dynamic.len() != t {
                    return Err(invalid(
                        "dynamic_edges",
                        format!("{} edge lists for {t} timesteps", dynamic.len()),
                    ));
                }
                if let Some(attrs) = &self.dynamic_edge_attrs {
                    if attrs.len() != t {
                        return Err(invalid(
                            "dynamic_edge_attrs",
                            format!("{} attr lists for {t} timesteps", attrs.len()),
                        ));
                    }
                }
                dynamic
                    .iter()
                    .enumerate()
                    .map(|(k, edges)| {
                        let attrs = self.dynamic_edge_attrs.as_ref().map(|a| a[k].clone());
                        Topology::new(self.node_count, self.directed, to_pairs(edges), attrs)
                            .map(Arc::new)
                            .map_err(|e| match e {
                                DataError::Invalid { field, reason } => DataError::Invalid {
                                    field: format!("dynamic_edges[{k}].{field}"),
                                    reason,
                                },
                                other => other,
                            })
                    })
                    .collect()
            }
        }
    }
}

/// Z-scores every row with the global mean and population standard
/// deviation of the first `floor(train_fraction · T)` rows (at least one).
pub fn standardize(
    raw: &[Vec<f64>],
    train_fraction: f64,
) -> Result<(Vec<Vec<f64>>, NormStats), DataError> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(invalid("train_fraction", format!("{train_fraction} not in (0, 1]")));
    }
    let rows = ((train_fraction * raw.len() as f64).floor() as usize).max(1);
    standardize_rows(raw, rows)
}

fn standardize_rows(
    raw: &[Vec<f64>],
    train_rows: usize,
) -> Result<(Vec<Vec<f64>>, NormStats), DataError> {
    let train = &raw[..train_rows.min(raw.len())];
    let count = train.iter().map(Vec::len).sum::<usize>() as f64;
    if count == 0.0 {
        return Err(DataError::ZeroVariance);
    }
    let mean = train.iter().flatten().sum::<f64>() / count;
    let var = train.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(DataError::ZeroVariance);
    }
    let stats = NormStats { mean, std };
    let out = raw
        .iter()
        .map(|row| row.iter().map(|&v| stats.apply(v)).collect())
        .collect();
    Ok((out, stats))
}

/// Lag-windowed, standardized snapshots with a chronological split.
#[derive(Debug, Clone)]
pub struct TemporalDataset {
    name: String,
    lags: usize,
    node_count: usize,
    snapshots: Vec<GraphSnapshot>,
    stats: NormStats,
    split: usize,
    split_fraction: f64,
    source: DatasetFile,
}

impl TemporalDataset {
    pub fn from_file(file: DatasetFile, lags: usize, split_fraction: f64) -> Result<Self, DataError> {
        if lags == 0 {
            return Err(invalid("lags", "must be positive"));
        }
        if !(split_fraction > 0.0 && split_fraction <= 1.0) {
            return Err(invalid("split", format!("{split_fraction} not in (0, 1]")));
        }
        let n = file.node_count;
        let t = file.series.len();
        for (k, row) in file.series.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(
                    format!("series[{k}]"),
                    format!("expected {n} values, got {}", row.len()),
                ));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("series[{k}][{j}]"), "non-finite value"));
            }
        }
        if t <= lags + 2 {
            return Err(DataError::TooShort { len: t, lags });
        }
        let topologies = file.topologies()?;

        let count = t - lags;
        let split = (split_fraction * count as f64).floor() as usize;
        // Training snapshots touch rows 0 .. split + lags.
        let (series, stats) = standardize_rows(&file.series, split + lags)?;

        let snapshots = (0..count)
            .map(|k| {
                let mut features = Vec::with_capacity(n * lags);
                for node in 0..n {
                    features.extend((0..lags).map(|j| series[k + j][node]));
                }
                // The topology in force at the most recent observation.
                let topo = Arc::clone(&topologies[k + lags - 1]);
                GraphSnapshot::new(features, lags, topo, series[k + lags].clone())
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            name: file.name.clone(),
            lags,
            node_count: n,
            snapshots,
            stats,
            split,
            split_fraction,
            source: file,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn snapshots(&self) -> &[GraphSnapshot] {
        &self.snapshots
    }

    pub fn stats(&self) -> NormStats {
        self.stats
    }

    pub fn split_index(&self) -> usize {
        self.split
    }

    pub fn split_fraction(&self) -> f64 {
        self.split_fraction
    }

    pub fn source(&self) -> &DatasetFile {
        &self.source
    }

    pub fn partition(&self, partition: Partition) -> &[GraphSnapshot] {
        match partition {
            Partition::Train => &self.snapshots[..self.split],
            Partition::Test => &self.snapshots[self.split..],
        }
    }

    pub fn train(&self) -> &[GraphSnapshot] {
        self.partition(Partition::Train)
    }

    pub fn test(&self) -> &[GraphSnapshot] {
        self.partition(Partition::Test)
    }

    /// Largest standardized value over training features and targets.
    pub fn p_max(&self) -> f64 {
        self.train()
            .iter()
            .flat_map(|s| s.features().iter().chain(s.target()))
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes the source schema; loading it with the same lags and split
    /// reproduces this dataset exactly.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.source.write(path)
    }

    /// Replaces snapshots in place; used to build derived views in tests and
    /// holdout search. Stats and source are kept.
    pub(crate) fn with_snapshots(&self, snapshots: Vec<GraphSnapshot>, split: usize) -> Self {
        Self {
            snapshots,
            split,
            ..self.clone()
        }
    }
}

pub fn load_dataset(path: &Path, lags: usize) -> Result<TemporalDataset, DataError> {
    load_dataset_with(path, lags, DEFAULT_SPLIT)
}

pub fn load_dataset_with(
    path: &Path,
    lags: usize,
    split_fraction: f64,
) -> Result<TemporalDataset, DataError> {
    TemporalDataset::from_file(DatasetFile::read(path)?, lags, split_fraction)
}

/// Consecutive `(s_t, s_{t+1})` pairs inside one partition.
pub fn snapshot_pairs(
    ds: &TemporalDataset,
    partition: Partition,
) -> Result<Vec<(&GraphSnapshot, &GraphSnapshot)>, DataError> {
    consecutive_pairs(ds.partition(partition)).ok_or(DataError::PartitionTooSmall {
        partition,
        size: ds.partition(partition).len(),
        needed: 2,
    })
}

pub(crate) fn consecutive_pairs(
    snapshots: &[GraphSnapshot],
) -> Option<Vec<(&GraphSnapshot, &GraphSnapshot)>> {
    (snapshots.len() >= 2).then(|| snapshots.windows(2).map(|w| (&w[0], &w[1])).collect())
}
