//! Graph forecasters behind one `predict` interface: each maps a snapshot's
//! `N × F` lag features and topology to an `N × 1` next-step prediction.

mod gat;
mod gcn;
mod recurrent;
mod serialize;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BoundParams, ParamSet, Tape, Tensor, Var};
use crate::temporal_graph::GraphSnapshot;

pub use serialize::ParamFile;

pub const DEFAULT_HIDDEN: usize = 32;
pub const GAT_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model kind `{0}` (expected gcn, gat, gru or lstm)")]
    UnknownKind(String),
    #[error("snapshot has {got} lag features, model was built for {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("{0} must be at least 1")]
    InvalidSize(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("parameter file: {0}")]
    ParamFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Gat,
    #[serde(rename = "gru")]
    GraphGru,
    #[serde(rename = "lstm")]
    GraphLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Gcn,
        ModelKind::Gat,
        ModelKind::GraphGru,
        ModelKind::GraphLstm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::GraphGru => "gru",
            ModelKind::GraphLstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            "gru" | "graphgru" | "graph_gru" => Ok(ModelKind::GraphGru),
            "lstm" | "graphlstm" | "graph_lstm" => Ok(ModelKind::GraphLstm),
            _ => Err(ModelError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    kind: ModelKind,
    features: usize,
    hidden: usize,
    params: ParamSet,
}

/// Glorot-uniform weights and zero biases, reproducible from `seed`.
pub fn init_forecaster(
    kind: ModelKind,
    features: usize,
    hidden: usize,
    seed: u64,
) -> Result<Forecaster, ModelError> {
    Forecaster::new(kind, features, hidden, seed)
}

impl Forecaster {
    pub fn new(kind: ModelKind, features: usize, hidden: usize, seed: u64) -> Result<Self, ModelError> {
        if features == 0 {
            return Err(ModelError::InvalidSize("feature count"));
        }
        if hidden == 0 {
            return Err(ModelError::InvalidSize("hidden size"));
        }
        let mut init = Initializer::new(seed);
        let layout = match kind {
            ModelKind::Gcn => gcn::layout(features, hidden),
            ModelKind::Gat => gat::layout(features, hidden),
            ModelKind::GraphGru => recurrent::gru_layout(hidden),
            ModelKind::GraphLstm => recurrent::lstm_layout(hidden),
        };
        for spec in layout {
            let tensor = init.make(&spec);
            init.params.insert(spec.name, tensor)?;
        }
        Ok(Self {
            kind,
            features,
            hidden,
            params: init.params,
        })
    }

    /// Rebuilds a forecaster around existing parameters, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_params(
        kind: ModelKind,
        features: usize,
        hidden: usize,
        params: ParamSet,
    ) -> Result<Self, ModelError> {
        let reference = Self::new(kind, features, hidden, params.seed())?;
        if reference.params.len() != params.len() {
            return Err(ModelError::ParamFile(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .map_err(|_| ModelError::ParamFile(format!("missing tensor `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(ModelError::ParamFile(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            kind,
            features,
            hidden,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.params.seed()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Differentiable `N × 1` prediction recorded on the tape of `bound`.
    pub fn predict<'t>(
        &self,
        bound: &BoundParams<'t>,
        snapshot: &GraphSnapshot,
    ) -> Result<Var<'t>, ModelError> {
        if snapshot.lags() != self.features {
            return Err(ModelError::FeatureMismatch {
                expected: self.features,
                got: snapshot.lags(),
            });
        }
        match self.kind {
            ModelKind::Gcn => gcn::predict(bound, snapshot),
            ModelKind::Gat => gat::predict(bound, snapshot),
            ModelKind::GraphGru => recurrent::predict_gru(bound, snapshot, self.hidden),
            ModelKind::GraphLstm => recurrent::predict_lstm(bound, snapshot, self.hidden),
        }
    }

    /// Prediction values without keeping the tape.
    pub fn predict_values(&self, snapshot: &GraphSnapshot) -> Result<Vec<f64>, ModelError> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        Ok(self.predict(&bound, snapshot)?.value())
    }

    /// Row-major `N × N` attention coefficients of a GAT forecaster.
    pub fn attention(&self, snapshot: &GraphSnapshot) -> Result<Vec<f64>, ModelError> {
        assert_eq!(self.kind, ModelKind::Gat, "attention() needs a GAT forecaster");
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        Ok(gat::attention(&bound, snapshot)?.value())
    }
}

struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    bias: bool,
}

impl ParamSpec {
    fn weight(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            bias: false,
        }
    }

    fn bias(name: &str, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows: 1,
            cols,
            bias: true,
        }
    }
}

struct Initializer {
    rng: ChaCha8Rng,
    params: ParamSet,
}

impl Initializer {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ParamSet::new(seed),
        }
    }

    fn make(&mut self, spec: &ParamSpec) -> Tensor {
        let n = spec.rows * spec.cols;
        let data = if spec.bias {
            vec![0.0; n]
        } else {
            let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
            (0..n).map(|_| self.rng.random_range(-limit..limit)).collect()
        };
        Tensor::matrix(spec.rows, spec.cols, data).expect("finite init")
    }
}

/// `X W + b` style dense layer on a tape.
fn dense<'t>(x: &Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    x.matmul(&w)?.add_row(&b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing() {
        assert_eq!("GCN".parse::<ModelKind>().unwrap(), ModelKind::Gcn);
        assert_eq!("lstm".parse::<ModelKind>().unwrap(), ModelKind::GraphLstm);
        assert!(matches!("evolvegcnh".parse::<ModelKind>(), Err(ModelError::UnknownKind(_))));
    }

    #[test]
    fn same_seed_same_params() {
        for kind in ModelKind::ALL {
            let a = init_forecaster(kind, 4, 8, 7).unwrap();
            let b = init_forecaster(kind, 4, 8, 7).unwrap();
            assert_eq!(a.params().flat_values(), b.params().flat_values());
            let c = init_forecaster(kind, 4, 8, 8).unwrap();
            assert_ne!(a.params().flat_values(), c.params().flat_values());
        }
    }

    #[test]
    fn biases_zero_weights_bounded() {
        let f = init_forecaster(ModelKind::Gcn, 4, DEFAULT_HIDDEN, 1).unwrap();
        assert!(f.params().get("gcn.b1").unwrap().data().iter().all(|v| *v == 0.0));
        let limit = (6.0f64 / (4 + 32) as f64).sqrt();
        let w1 = f.params().get("gcn.w1").unwrap();
        assert_eq!(w1.shape(), &[4, 32]);
        assert!(w1.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn sizes_validated() {
        assert!(init_forecaster(ModelKind::Gcn, 0, 8, 0).is_err());
        assert!(init_forecaster(ModelKind::Gat, 4, 0, 0).is_err());
    }
}
