//! Two-step training loop, composite loss, evaluation metrics and the
//! temporal-holdout search over loss weights.
//!
//! For every consecutive train pair `(s_t, s_{t+1})` the forecaster predicts
//! `t+1` from `s_t` and `t+2` from `s_{t+1}`. The data loss compares the first
//! prediction with its target; the physics loss is the node mean of the
//! squared residual built from `x_t` and both predictions. One Adam step is
//! taken per pair on `λ₁·L_data + λ₂·L_phy`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, AdamConfig, AutodiffError, BoundParams, Tape, Var};
use crate::models::{Forecaster, ModelError, ModelKind, DEFAULT_HIDDEN};
use crate::physics::{
    physics_loss, residual, residual_values, PhysicsConfig, PhysicsError, PhysicsSpec,
    ResidualInputs,
};
use crate::temporal_graph::{consecutive_pairs, DataError, GraphSnapshot, Partition, TemporalDataset};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, pair {pair}")]
    NonFiniteLoss { epoch: usize, pair: usize },
    #[error("{partition} partition has {size} snapshots; at least {needed} required")]
    TooFewSnapshots {
        partition: &'static str,
        size: usize,
        needed: usize,
    },
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}
fn default_lags() -> usize {
    4
}
fn default_lambda1() -> f64 {
    1.0
}
fn default_lambda2() -> f64 {
    0.1
}
fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    100
}
fn default_split() -> f64 {
    crate::temporal_graph::DEFAULT_SPLIT
}

/// Run configuration, read from JSON. Every key except `model` has a default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "PhysicsConfig::lwr")]
    pub physics: PhysicsConfig,
    #[serde(default = "default_split")]
    pub split: f64,
    /// Also supervise the `t+2` prediction against its own target.
    #[serde(default)]
    pub supervise_t2: bool,
}

impl TrainConfig {
    pub fn new(model: ModelKind, physics: PhysicsConfig) -> Self {
        Self {
            model,
            hidden: default_hidden(),
            lags: default_lags(),
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            lr: default_lr(),
            epochs: default_epochs(),
            seed: 0,
            physics,
            split: default_split(),
            supervise_t2: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 must be nonnegative, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2 must be nonnegative, got {}", self.lambda2));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.hidden == 0 || self.lags == 0 {
            return bad("hidden and lags must be at least 1".into());
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split must lie in (0, 1), got {}", self.split));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub data_loss: f64,
    pub phy_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    /// RMS physics residual over consecutive pairs; absent when the
    /// partition has a single snapshot.
    pub phy_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset: String,
    pub physics: PhysicsSpec,
    pub epochs: Vec<EpochLosses>,
    pub optimizer_steps: u64,
    pub test_mae: f64,
    pub test_mse: f64,
    pub test_phy_residual: Option<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl RunReport {
    pub fn test_metrics(&self) -> Metrics {
        Metrics {
            mae: self.test_mae,
            mse: self.test_mse,
            phy_residual: self.test_phy_residual,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loss curve as CSV with header `epoch,data_loss,phy_loss,total`.
    pub fn write_loss_curve(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Differentiable pieces of one pair's objective.
pub struct PairLoss<'t> {
    pub pred_next: Var<'t>,
    pub pred_after: Var<'t>,
    pub data: Var<'t>,
    pub physics: Var<'t>,
    pub total: Var<'t>,
}

fn mse_var<'t>(pred: &Var<'t>, target: &[f64]) -> std::result::Result<Var<'t>, AutodiffError> {
    let y = pred.tape().column(target);
    pred.sub(&y)?.square()?.mean()
}

/// Records both forward passes and the composite loss for `(s_t, s_{t+1})`.
/// With `λ₂ = 0` the physics term is evaluated for reporting only and never
/// enters `total`.
pub fn pair_loss<'t>(
    model: &Forecaster,
    bound: &BoundParams<'t>,
    cfg: &TrainConfig,
    spec: &PhysicsSpec,
    s_t: &GraphSnapshot,
    s_next: &GraphSnapshot,
) -> Result<PairLoss<'t>> {
    let pred_next = model.predict(bound, s_t)?;
    let pred_after = model.predict(bound, s_next)?;

    let mut data = mse_var(&pred_next, s_t.target())?;
    if cfg.supervise_t2 {
        data = data.add(&mse_var(&pred_after, s_next.target())?)?.scale(0.5)?;
    }
    let x_t = s_t.last_observation();
    let res = residual(
        spec,
        &ResidualInputs {
            x_t: &x_t,
            pred_next,
            pred_after,
            graph: s_next.topology().context(),
        },
    )?;
    let physics = physics_loss(res)?;

    let weighted = data.scale(cfg.lambda1)?;
    let total = if cfg.lambda2 == 0.0 {
        weighted
    } else {
        weighted.add(&physics.scale(cfg.lambda2)?)?
    };
    Ok(PairLoss {
        pred_next,
        pred_after,
        data,
        physics,
        total,
    })
}

/// Trains a fresh forecaster on the train partition of `ds`.
pub fn train(ds: &TemporalDataset, cfg: &TrainConfig) -> Result<(Forecaster, RunReport)> {
    cfg.validate()?;
    if cfg.lags != ds.lags() {
        return Err(TrainError::Config(format!(
            "config lags {} differ from dataset lags {}",
            cfg.lags,
            ds.lags()
        )));
    }
    let spec = cfg.physics.resolve(ds.p_max())?;
    let pairs = consecutive_pairs(ds.train()).ok_or(TrainError::TooFewSnapshots {
        partition: "train",
        size: ds.train().len(),
        needed: 2,
    })?;

    let started = Instant::now();
    let mut model = Forecaster::new(cfg.model, ds.lags(), cfg.hidden, cfg.seed)?;
    let mut adam = cfg.adam();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (mut data_sum, mut phy_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for (pair, (s_t, s_next)) in pairs.iter().enumerate() {
            model.params_mut().zero_grads();
            let tape = Tape::new();
            let bound = model.params().bind(&tape);
            let loss = pair_loss(&model, &bound, cfg, &spec, s_t, s_next)?;
            let (data, phy, total) = (loss.data.item(), loss.physics.item(), loss.total.item());
            if !(data.is_finite() && phy.is_finite() && total.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, pair });
            }
            model.params_mut().backward(&bound, loss.total)?;
            adam.step(model.params_mut())?;
            if !model.params().is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, pair });
            }
            data_sum += data;
            phy_sum += phy;
            total_sum += total;
        }
        let p = pairs.len() as f64;
        epochs.push(EpochLosses {
            epoch,
            data_loss: data_sum / p,
            phy_loss: phy_sum / p,
            total: total_sum / p,
        });
    }
    let train_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let metrics = evaluate(&model, ds, Partition::Test, &spec)?;
    let eval_seconds = started.elapsed().as_secs_f64();

    let report = RunReport {
        config: *cfg,
        seed: cfg.seed,
        dataset: ds.name().to_string(),
        physics: spec,
        epochs,
        optimizer_steps: adam.steps_taken(),
        test_mae: metrics.mae,
        test_mse: metrics.mse,
        test_phy_residual: metrics.phy_residual,
        train_seconds,
        eval_seconds,
    };
    Ok((model, report))
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_eq!(y.len(), y_hat.len(), "mae: length mismatch");
    y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_eq!(y.len(), y_hat.len(), "mse: length mismatch");
    y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

/// Scores `model` on one partition, on the standardized scale.
pub fn evaluate(
    model: &Forecaster,
    ds: &TemporalDataset,
    partition: Partition,
    spec: &PhysicsSpec,
) -> Result<Metrics> {
    let snaps = ds.partition(partition);
    if snaps.is_empty() {
        return Err(TrainError::TooFewSnapshots {
            partition: match partition {
                Partition::Train => "train",
                Partition::Test => "test",
            },
            size: 0,
            needed: 1,
        });
    }
    let preds = snaps
        .iter()
        .map(|s| model.predict_values(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let y: Vec<f64> = snaps.iter().flat_map(|s| s.target().iter().copied()).collect();
    let y_hat: Vec<f64> = preds.iter().flatten().copied().collect();

    let mut sq = 0.0;
    let mut count = 0usize;
    for k in 0..snaps.len().saturating_sub(1) {
        let x_t = snaps[k].last_observation();
        let r = residual_values(
            spec,
            &x_t,
            &preds[k],
            &preds[k + 1],
            snaps[k + 1].topology().context(),
        )?;
        sq += r.iter().map(|v| v * v).sum::<f64>();
        count += r.len();
    }
    Ok(Metrics {
        mae: mae(&y, &y_hat),
        mse: mse(&y, &y_hat),
        phy_residual: (count > 0).then(|| (sq / count as f64).sqrt()),
    })
}

/// `λ₂ ∈ {0, 0.01, 0.1, 1}` with `λ₁ = 1`.
pub fn default_lambda_grid() -> Vec<(f64, f64)> {
    [0.0, 0.01, 0.1, 1.0].iter().map(|&l2| (1.0, l2)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda1: f64,
    pub lambda2: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda1: f64,
    pub lambda2: f64,
    pub scores: Vec<LambdaScore>,
}

/// Temporal holdout over the train partition: the last 20% of train
/// snapshots validate, the rest train. Ties in validation MSE go to the
/// smaller λ₂, then the smaller λ₁.
pub fn lambda_search(
    ds: &TemporalDataset,
    cfg: &TrainConfig,
    grid: &[(f64, f64)],
) -> Result<LambdaChoice> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let train = ds.train();
    let inner = (train.len() as f64 * 0.8).floor() as usize;
    if inner < 2 || inner == train.len() {
        return Err(TrainError::TooFewSnapshots {
            partition: "train",
            size: train.len(),
            needed: 3,
        });
    }
    let holdout = ds.with_snapshots(train.to_vec(), inner);

    let scores = grid
        .par_iter()
        .map(|&(lambda1, lambda2)| {
            let run_cfg = TrainConfig {
                lambda1,
                lambda2,
                ..*cfg
            };
            Ok(LambdaScore {
                lambda1,
                lambda2,
                validation_mse: validation_mse(&holdout, &run_cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = scores
        .iter()
        .min_by(|a, b| {
            a.validation_mse
                .total_cmp(&b.validation_mse)
                .then(a.lambda2.total_cmp(&b.lambda2))
                .then(a.lambda1.total_cmp(&b.lambda1))
        })
        .expect("grid is nonempty");
    Ok(LambdaChoice {
        lambda1: best.lambda1,
        lambda2: best.lambda2,
        scores,
    })
}

/// Validation MSE of one grid point; a diverged run scores +∞.
fn validation_mse(ds: &TemporalDataset, cfg: &TrainConfig) -> Result<f64> {
    match train(ds, cfg) {
        Ok((_, report)) if report.test_mse.is_finite() => Ok(report.test_mse),
        Ok(_) | Err(TrainError::NonFiniteLoss { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal_graph::DatasetFile;

    fn dataset(t: usize) -> TemporalDataset {
        let n = 5;
        let series = (0..t)
            .map(|k| {
                (0..n)
                    .map(|i| 0.3 + 0.2 * ((k as f64) * 0.3 + i as f64).sin())
                    .collect()
            })
            .collect();
        let file = DatasetFile {
            name: "sine".into(),
            directed: false,
            node_count: n,
            edges: (0..n).map(|i| [i, (i + 1) % n]).collect(),
            edge_attrs: None,
            dynamic_edges: None,
            dynamic_edge_attrs: None,
            series,
        };
        TemporalDataset::from_file(file, 3, 0.8).unwrap()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            hidden: 4,
            lags: 3,
            epochs,
            ..TrainConfig::new(ModelKind::Gcn, PhysicsConfig::lwr())
        }
    }

    #[test]
    fn config_defaults() {
        let cfg = TrainConfig::from_json(r#"{"model":"gcn"}"#).unwrap();
        assert_eq!(cfg.lambda1, 1.0);
        assert_eq!(cfg.lambda2, 0.1);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.split, 0.8);
        assert_eq!(cfg.hidden, 32);
        assert!(!cfg.supervise_t2);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(TrainConfig::from_json(r#"{"model":"gcn","lambda2":-1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"model":"gcn","epochs":0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"model":"gcn","bogus":1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"model":"evolve"}"#).is_err());
    }

    #[test]
    fn one_step_per_pair() {
        let ds = dataset(30);
        let (_, report) = train(&ds, &config(2)).unwrap();
        let pairs = ds.train().len() as u64 - 1;
        assert_eq!(report.optimizer_steps, 2 * pairs);
        assert_eq!(report.epochs.len(), 2);
    }

    #[test]
    fn total_is_weighted_sum() {
        let ds = dataset(30);
        let cfg = TrainConfig {
            lambda1: 0.7,
            lambda2: 0.3,
            ..config(3)
        };
        let (_, report) = train(&ds, &cfg).unwrap();
        for e in &report.epochs {
            let expected = 0.7 * e.data_loss + 0.3 * e.phy_loss;
            assert!((e.total - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn test_partition_never_read_by_training() {
        let ds = dataset(30);
        let mut snaps = ds.snapshots().to_vec();
        let split = ds.split_index();
        let n = ds.node_count();
        for s in &mut snaps[split..] {
            *s = GraphSnapshot::new(
                vec![123.0; n * 3],
                3,
                s.topology().clone(),
                vec![-50.0; n],
            )
            .unwrap();
        }
        let poisoned = ds.with_snapshots(snaps, split);
        let (a, _) = train(&ds, &config(2)).unwrap();
        let (b, _) = train(&poisoned, &config(2)).unwrap();
        assert_eq!(a.params().flat_values(), b.params().flat_values());
    }

    #[test]
    fn pred_after_gets_no_gradient_without_physics() {
        let ds = dataset(30);
        let cfg = TrainConfig {
            lambda2: 0.0,
            ..config(1)
        };
        let spec = cfg.physics.resolve(ds.p_max()).unwrap();
        let model = Forecaster::new(cfg.model, 3, 4, 0).unwrap();
        let tape = Tape::new();
        let bound = model.params().bind(&tape);
        let loss = pair_loss(&model, &bound, &cfg, &spec, &ds.train()[0], &ds.train()[1]).unwrap();
        let grads = tape.backward(loss.total).unwrap();
        assert!(grads.wrt(loss.pred_after).iter().all(|g| *g == 0.0));
        assert!(grads.wrt(loss.pred_next).iter().any(|g| *g != 0.0));
    }

    #[test]
    fn physics_weight_reaches_pred_after() {
        let ds = dataset(30);
        let cfg = config(1);
        let spec = cfg.physics.resolve(ds.p_max()).unwrap();
        let model = Forecaster::new(cfg.model, 3, 4, 0).unwrap();
        let tape = Tape::new();
        let bound = model.params().bind(&tape);
        let loss = pair_loss(&model, &bound, &cfg, &spec, &ds.train()[0], &ds.train()[1]).unwrap();
        let grads = tape.backward(loss.total).unwrap();
        assert!(grads.wrt(loss.pred_after).iter().any(|g| *g != 0.0));
    }

    #[test]
    fn metric_hand_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]), 1.5);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]), 2.5);
        assert_eq!(mse(&[0.3, -1.0], &[0.3, -1.0]), 0.0);
    }

    #[test]
    fn singleton_grid_returns_its_point() {
        let ds = dataset(40);
        let choice = lambda_search(&ds, &config(1), &[(1.0, 0.1)]).unwrap();
        assert_eq!((choice.lambda1, choice.lambda2), (1.0, 0.1));
    }

    #[test]
    fn search_needs_enough_train_snapshots() {
        let ds = dataset(6);
        assert!(lambda_search(&ds, &config(1), &default_lambda_grid()).is_err());
        assert!(matches!(
            lambda_search(&dataset(40), &config(1), &[]),
            Err(TrainError::EmptyGrid)
        ));
    }

    #[test]
    fn lag_mismatch_rejected() {
        let ds = dataset(30);
        let cfg = TrainConfig { lags: 4, ..config(1) };
        assert!(matches!(train(&ds, &cfg), Err(TrainError::Config(_))));
    }
}
