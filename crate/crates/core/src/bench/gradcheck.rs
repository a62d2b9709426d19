use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{fd_gradient, max_relative_error, AutodiffError, ParamSet, Tape};
use crate::models::{Forecaster, ModelKind};
use crate::physics::{EquationKind, PhysicsConfig, PMaxSetting};
use crate::temporal_graph::{GraphSnapshot, Topology};
use crate::trainer::{pair_loss, TrainConfig, TrainError};

use super::Result;

pub const GRADCHECK_EPS: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

const NODES: usize = 6;
const FEATURES: usize = 4;
const HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub model: ModelKind,
    pub equation: EquationKind,
    pub entries: usize,
    pub max_relative_error: f64,
}

fn instance(seed: u64) -> (GraphSnapshot, GraphSnapshot) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..NODES {
        for j in i + 1..NODES {
            if rng.random_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    let attrs = edges.iter().map(|_| rng.random_range(0.5..2.0)).collect();
    let topo = Arc::new(Topology::new(NODES, false, edges, Some(attrs)).expect("valid graph"));
    // F + 2 rows so the second snapshot is the first shifted by one step.
    let series: Vec<Vec<f64>> = (0..FEATURES + 2)
        .map(|_| (0..NODES).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    let snap = |k: usize| {
        let features = (0..NODES)
            .flat_map(|i| (k..k + FEATURES).map(move |r| (r, i)))
            .map(|(r, i)| series[r][i])
            .collect();
        GraphSnapshot::new(features, FEATURES, topo.clone(), series[k + FEATURES].clone())
            .expect("consistent shapes")
    };
    (snap(0), snap(1))
}

/// Analytic gradients of the total two-step loss (`λ₁ = 1`, `λ₂ = 0.1`)
/// against central finite differences, for every model and both equations.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckResult>> {
    let (s_t, s_next) = instance(seed);
    let mut out = Vec::new();
    for equation in [EquationKind::Lwr, EquationKind::Lienard] {
        let physics = PhysicsConfig {
            p_max: PMaxSetting::Value(1.0),
            ..match equation {
                EquationKind::Lwr => PhysicsConfig::lwr(),
                EquationKind::Lienard => PhysicsConfig::lienard(),
            }
        };
        let spec = physics.resolve(1.0).map_err(TrainError::from)?;
        for model_kind in ModelKind::ALL {
            let cfg = TrainConfig {
                hidden: HIDDEN,
                lags: FEATURES,
                lambda1: 1.0,
                lambda2: 0.1,
                ..TrainConfig::new(model_kind, physics)
            };
            let mut model =
                Forecaster::new(model_kind, FEATURES, HIDDEN, seed).map_err(TrainError::from)?;

            let tape = Tape::new();
            let bound = model.params().bind(&tape);
            let loss = pair_loss(&model, &bound, &cfg, &spec, &s_t, &s_next)?;
            model.params_mut().backward(&bound, loss.total).map_err(TrainError::from)?;

            let total_of = |params: &ParamSet| -> std::result::Result<f64, AutodiffError> {
                let probe = Forecaster::from_params(model_kind, FEATURES, HIDDEN, params.clone())
                    .expect("same layout");
                let tape = Tape::new();
                let bound = probe.params().bind(&tape);
                match pair_loss(&probe, &bound, &cfg, &spec, &s_t, &s_next) {
                    Ok(l) => Ok(l.total.item()),
                    Err(TrainError::Autodiff(e)) => Err(e),
                    Err(e) => panic!("unexpected error while probing: {e}"),
                }
            };
            let numeric =
                fd_gradient(total_of, model.params(), GRADCHECK_EPS).map_err(TrainError::from)?;

            let mut worst: f64 = 0.0;
            let mut entries = 0;
            for (name, t) in model.params().iter() {
                let analytic = t.grad().expect("backward filled every gradient");
                worst = worst.max(max_relative_error(analytic, &numeric[name], GRADCHECK_FLOOR));
                entries += analytic.len();
            }
            out.push(GradcheckResult {
                model: model_kind,
                equation,
                entries,
                max_relative_error: worst,
            });
        }
    }
    Ok(out)
}
