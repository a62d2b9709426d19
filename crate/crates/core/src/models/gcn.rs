use crate::autodiff::{BoundParams, Var};
use crate::temporal_graph::GraphSnapshot;

use super::{dense, ModelError, ParamSpec};

pub(super) fn layout(features: usize, hidden: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::weight("gcn.w1", features, hidden),
        ParamSpec::bias("gcn.b1", hidden),
        ParamSpec::weight("gcn.w2", hidden, 1),
        ParamSpec::bias("gcn.b2", 1),
    ]
}

/// `ŷ = Â relu(Â X W₁ + b₁) w₂ + b₂`
pub(super) fn predict<'t>(
    bound: &BoundParams<'t>,
    snapshot: &GraphSnapshot,
) -> Result<Var<'t>, ModelError> {
    let tape = bound.tape();
    let adj = &snapshot.topology().context().adjacency;
    let x = tape.constant(&snapshot.feature_tensor());

    let h = dense(&x.spmm(adj)?, bound.get("gcn.w1")?, bound.get("gcn.b1")?)?.relu()?;
    let out = dense(&h.spmm(adj)?, bound.get("gcn.w2")?, bound.get("gcn.b2")?)?;
    Ok(out)
}
