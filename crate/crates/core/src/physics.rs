//! Governing-equation residuals evaluated on two consecutive model
//! predictions, and the resulting physics loss.
//!
//! Two equations are supported:
//!
//! * the Liénard oscillator `ẍ = −α x ẋ − γ x − β x³`, applied per node with
//!   no spatial coupling. Derivatives at `t+1` use the three values
//!   `(x_t, pred_{t+1}, pred_{t+2})`: a central first difference and the
//!   three-point second difference.
//! * the LWR conservation law with linear velocity `v = v_max (1 − p/p_max)`,
//!   discretized on the graph as
//!   `(pred_{t+2} − pred_{t+1})/δt + (1/N_i) Σ_j (q_i − q_j)/d_ij` with flux
//!   `q = pred_{t+1} · v(pred_{t+1})`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph_ops::{weighted_spatial_derivative, GraphContext, NeighborIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("residual inputs disagree on node count: {0}")]
    LengthMismatch(String),
    #[error("invalid physics parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LienardParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LienardParams {
    fn default() -> Self {
        Self {
            alpha: 0.45,
            beta: 0.5,
            gamma: -0.5,
        }
    }
}

impl LienardParams {
    /// `ẍ` as a function of state.
    pub fn acceleration(&self, x: f64, v: f64) -> f64 {
        -self.alpha * x * v - self.gamma * x - self.beta * x * x * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwrParams {
    pub v_max: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "equation", rename_all = "lowercase")]
pub enum Equation {
    Lienard(LienardParams),
    Lwr(LwrParams),
}

/// A fully resolved equation plus its snapshot period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsSpec {
    pub equation: Equation,
    pub dt: f64,
}

impl PhysicsSpec {
    pub fn lienard(params: LienardParams, dt: f64) -> Result<Self, PhysicsError> {
        Self::validated(Equation::Lienard(params), dt)
    }

    pub fn lwr(params: LwrParams, dt: f64) -> Result<Self, PhysicsError> {
        Self::validated(Equation::Lwr(params), dt)
    }

    fn validated(equation: Equation, dt: f64) -> Result<Self, PhysicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PhysicsError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if let Equation::Lwr(p) = equation {
            if !(p.p_max > 0.0 && p.p_max.is_finite()) {
                return Err(PhysicsError::InvalidParameter(format!(
                    "p_max must be positive, got {}",
                    p.p_max
                )));
            }
        }
        Ok(Self { equation, dt })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquationKind {
    Lienard,
    Lwr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PMaxSetting {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for PMaxSetting {
    fn default() -> Self {
        PMaxSetting::Auto(AutoTag::Auto)
    }
}

/// Physics block of the JSON config. Unset parameters take their defaults;
/// `p_max: "auto"` resolves to the dataset's training maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub equation: EquationKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default)]
    pub p_max: PMaxSetting,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_alpha() -> f64 {
    LienardParams::default().alpha
}
fn default_beta() -> f64 {
    LienardParams::default().beta
}
fn default_gamma() -> f64 {
    LienardParams::default().gamma
}
fn default_v_max() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1.0
}

impl PhysicsConfig {
    pub fn lienard() -> Self {
        Self::with_equation(EquationKind::Lienard)
    }

    pub fn lwr() -> Self {
        Self::with_equation(EquationKind::Lwr)
    }

    fn with_equation(equation: EquationKind) -> Self {
        Self {
            equation,
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: default_gamma(),
            v_max: default_v_max(),
            p_max: PMaxSetting::default(),
            dt: default_dt(),
        }
    }

    pub fn resolve(&self, auto_p_max: f64) -> Result<PhysicsSpec, PhysicsError> {
        match self.equation {
            EquationKind::Lienard => PhysicsSpec::lienard(
                LienardParams {
                    alpha: self.alpha,
                    beta: self.beta,
                    gamma: self.gamma,
                },
                self.dt,
            ),
            EquationKind::Lwr => {
                let p_max = match self.p_max {
                    PMaxSetting::Value(v) => v,
                    PMaxSetting::Auto(_) => auto_p_max,
                };
                PhysicsSpec::lwr(
                    LwrParams {
                        v_max: self.v_max,
                        p_max,
                    },
                    self.dt,
                )
            }
        }
    }
}

/// Observed values and the two predictions entering one residual.
#[derive(Debug, Clone, Copy)]
pub struct ResidualInputs<'a, 't> {
    /// Most recent observation of `s_t`.
    pub x_t: &'a [f64],
    pub pred_next: Var<'t>,
    pub pred_after: Var<'t>,
    /// Graph of the evaluation snapshot `s_{t+1}`.
    pub graph: &'a GraphContext,
}

impl ResidualInputs<'_, '_> {
    fn check(&self) -> Result<usize, PhysicsError> {
        let n = self.x_t.len();
        let (a, b) = (self.pred_next.numel(), self.pred_after.numel());
        let g = self.graph.neighbors.node_count();
        if a != n || b != n || g != n {
            return Err(PhysicsError::LengthMismatch(format!(
                "x_t={n}, pred_next={a}, pred_after={b}, graph={g}"
            )));
        }
        Ok(n)
    }
}

/// `v_max (1 − p/p_max)`, unclamped.
pub fn velocity(p: &[f64], params: &LwrParams) -> Vec<f64> {
    p.iter()
        .map(|&x| params.v_max * (1.0 - x / params.p_max))
        .collect()
}

fn flux<'t>(p: Var<'t>, params: &LwrParams) -> Result<Var<'t>, PhysicsError> {
    let v = p
        .scale(-params.v_max / params.p_max)?
        .add_scalar(params.v_max)?;
    Ok(p.mul(&v)?)
}

pub fn lwr_residual<'t>(
    inputs: &ResidualInputs<'_, 't>,
    params: &LwrParams,
    dt: f64,
) -> Result<Var<'t>, PhysicsError> {
    inputs.check()?;
    let p1 = as_column(inputs.pred_next)?;
    let p2 = as_column(inputs.pred_after)?;
    let dpdt = p2.sub(&p1)?.scale(1.0 / dt)?;
    let spatial = flux(p1, params)?.spmm(&inputs.graph.weighted_derivative)?;
    Ok(dpdt.add(&spatial)?)
}

pub fn lienard_residual<'t>(
    inputs: &ResidualInputs<'_, 't>,
    params: &LienardParams,
    dt: f64,
) -> Result<Var<'t>, PhysicsError> {
    inputs.check()?;
    let tape = inputs.pred_next.tape();
    let x0 = tape.column(inputs.x_t);
    let x1 = as_column(inputs.pred_next)?;
    let x2 = as_column(inputs.pred_after)?;

    let vel = x2.sub(&x0)?.scale(1.0 / (2.0 * dt))?;
    let acc = x2
        .sub(&x1.scale(2.0)?)?
        .add(&x0)?
        .scale(1.0 / (dt * dt))?;
    let damping = x1.mul(&vel)?.scale(params.alpha)?;
    let linear = x1.scale(params.gamma)?;
    let cubic = x1.mul(&x1)?.mul(&x1)?.scale(params.beta)?;
    Ok(acc.add(&damping)?.add(&linear)?.add(&cubic)?)
}

pub fn residual<'t>(
    spec: &PhysicsSpec,
    inputs: &ResidualInputs<'_, 't>,
) -> Result<Var<'t>, PhysicsError> {
    match &spec.equation {
        Equation::Lienard(p) => lienard_residual(inputs, p, spec.dt),
        Equation::Lwr(p) => lwr_residual(inputs, p, spec.dt),
    }
}

/// Node mean of squared residuals.
pub fn physics_loss<'t>(residual: Var<'t>) -> Result<Var<'t>, PhysicsError> {
    Ok(residual.square()?.mean()?)
}

/// Residual values for plain (non-differentiated) inputs.
pub fn residual_values(
    spec: &PhysicsSpec,
    x_t: &[f64],
    pred_next: &[f64],
    pred_after: &[f64],
    graph: &GraphContext,
) -> Result<Vec<f64>, PhysicsError> {
    let tape = Tape::new();
    let inputs = ResidualInputs {
        x_t,
        pred_next: tape.column(pred_next),
        pred_after: tape.column(pred_after),
        graph,
    };
    Ok(residual(spec, &inputs)?.value())
}

/// One forward-Euler step of the graph LWR equation.
pub fn lwr_euler_step(p: &[f64], params: &LwrParams, dt: f64, idx: &NeighborIndex) -> Vec<f64> {
    let q: Vec<f64> = p
        .iter()
        .zip(velocity(p, params))
        .map(|(x, v)| x * v)
        .collect();
    let div = weighted_spatial_derivative(&q, idx);
    p.iter().zip(div).map(|(x, d)| x - dt * d).collect()
}

fn as_column(v: Var<'_>) -> Result<Var<'_>, PhysicsError> {
    let shape = v.shape();
    if shape.len() == 2 && shape[1] == 1 {
        Ok(v)
    } else {
        Err(PhysicsError::LengthMismatch(format!(
            "predictions must be N×1 columns, got {shape:?}"
        )))
    }
}
