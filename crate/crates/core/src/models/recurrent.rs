//! Graph-convolutional GRU and LSTM cells run over the lag columns.
//!
//! Each gate is `Â [x_k ‖ h] W + b` with the usual nonlinearity; hidden and
//! cell states start at zero.

use crate::autodiff::{BoundParams, Tensor, Var};
use crate::temporal_graph::GraphSnapshot;

use super::{dense, ModelError, ParamSpec};

const GRU_GATES: [&str; 3] = ["z", "r", "c"];
const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

fn gated_layout(prefix: &str, gates: &[&str], hidden: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for g in gates {
        out.push(ParamSpec::weight(&format!("{prefix}.w_{g}"), 1 + hidden, hidden));
        out.push(ParamSpec::bias(&format!("{prefix}.b_{g}"), hidden));
    }
    out.push(ParamSpec::weight(&format!("{prefix}.w_out"), hidden, 1));
    out.push(ParamSpec::bias(&format!("{prefix}.b_out"), 1));
    out
}

pub(super) fn gru_layout(hidden: usize) -> Vec<ParamSpec> {
    gated_layout("gru", &GRU_GATES, hidden)
}

pub(super) fn lstm_layout(hidden: usize) -> Vec<ParamSpec> {
    gated_layout("lstm", &LSTM_GATES, hidden)
}

struct GateConv<'a, 't> {
    bound: &'a BoundParams<'t>,
    prefix: &'static str,
    snapshot: &'a GraphSnapshot,
}

impl<'t> GateConv<'_, 't> {
    /// `Â [x ‖ h] W_gate + b_gate`
    fn apply(&self, gate: &str, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>, ModelError> {
        let adj = &self.snapshot.topology().context().adjacency;
        let input = Var::concat(&[x, h], 1)?.spmm(adj)?;
        let w = self.bound.get(&format!("{}.w_{gate}", self.prefix))?;
        let b = self.bound.get(&format!("{}.b_{gate}", self.prefix))?;
        Ok(dense(&input, w, b)?)
    }

    fn head(&self, h: Var<'t>) -> Result<Var<'t>, ModelError> {
        let w = self.bound.get(&format!("{}.w_out", self.prefix))?;
        let b = self.bound.get(&format!("{}.b_out", self.prefix))?;
        Ok(dense(&h, w, b)?)
    }
}

fn zeros<'t>(bound: &BoundParams<'t>, n: usize, hidden: usize) -> Result<Var<'t>, ModelError> {
    Ok(bound.tape().constant(&Tensor::matrix(n, hidden, vec![0.0; n * hidden])?))
}

pub(super) fn predict_gru<'t>(
    bound: &BoundParams<'t>,
    snapshot: &GraphSnapshot,
    hidden: usize,
) -> Result<Var<'t>, ModelError> {
    let conv = GateConv {
        bound,
        prefix: "gru",
        snapshot,
    };
    let tape = bound.tape();
    let mut h = zeros(bound, snapshot.node_count(), hidden)?;
    for k in 0..snapshot.lags() {
        let x = tape.column(&snapshot.lag_column(k));
        let z = conv.apply("z", x, h)?.sigmoid()?;
        let r = conv.apply("r", x, h)?.sigmoid()?;
        let c = conv.apply("c", x, r.mul(&h)?)?.tanh()?;
        // h = z ⊙ h + (1 − z) ⊙ c
        let keep = z.mul(&h)?;
        let update = z.neg()?.add_scalar(1.0)?.mul(&c)?;
        h = keep.add(&update)?;
    }
    conv.head(h)
}

pub(super) fn predict_lstm<'t>(
    bound: &BoundParams<'t>,
    snapshot: &GraphSnapshot,
    hidden: usize,
) -> Result<Var<'t>, ModelError> {
    let conv = GateConv {
        bound,
        prefix: "lstm",
        snapshot,
    };
    let tape = bound.tape();
    let mut h = zeros(bound, snapshot.node_count(), hidden)?;
    let mut c = zeros(bound, snapshot.node_count(), hidden)?;
    for k in 0..snapshot.lags() {
        let x = tape.column(&snapshot.lag_column(k));
        let i = conv.apply("i", x, h)?.sigmoid()?;
        let f = conv.apply("f", x, h)?.sigmoid()?;
        let o = conv.apply("o", x, h)?.sigmoid()?;
        let g = conv.apply("g", x, h)?.tanh()?;
        c = f.mul(&c)?.add(&i.mul(&g)?)?;
        h = o.mul(&c.tanh()?)?;
    }
    conv.head(h)
}
