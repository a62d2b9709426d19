use crate::autodiff::{BoundParams, Tensor, Var};
use crate::temporal_graph::GraphSnapshot;

use super::{dense, ModelError, ParamSpec, GAT_SLOPE};

pub(super) fn layout(features: usize, hidden: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::weight("gat.w", features, hidden),
        ParamSpec::weight("gat.a_src", hidden, 1),
        ParamSpec::weight("gat.a_dst", hidden, 1),
        ParamSpec::weight("gat.w_out", hidden, 1),
        ParamSpec::bias("gat.b_out", 1),
    ]
}

/// Attention `α_ij = softmax_j leaky_relu(a_srcᵀ W x_i + a_dstᵀ W x_j)` over
/// `j ∈ N(i) ∪ {i}`, returned with the projected features `W X`.
fn attention_with_projection<'t>(
    bound: &BoundParams<'t>,
    snapshot: &GraphSnapshot,
) -> Result<(Var<'t>, Var<'t>), ModelError> {
    let tape = bound.tape();
    let n = snapshot.node_count();
    let ctx = snapshot.topology().context();
    let x = tape.constant(&snapshot.feature_tensor());

    let wx = x.matmul(&bound.get("gat.w")?)?;
    let src = wx.matmul(&bound.get("gat.a_src")?)?;
    let dst = wx.matmul(&bound.get("gat.a_dst")?)?;

    // logits[i][j] = src[i] + dst[j]
    let ones_row = tape.constant(&Tensor::matrix(1, n, vec![1.0; n])?);
    let ones_col = tape.constant(&Tensor::column(vec![1.0; n]));
    let logits = src
        .matmul(&ones_row)?
        .add(&ones_col.matmul(&dst.transpose()?)?)?;
    let alpha = logits
        .leaky_relu(GAT_SLOPE)?
        .masked_softmax_rows(&ctx.attention_mask)?;
    Ok((alpha, wx))
}

pub(super) fn attention<'t>(
    bound: &BoundParams<'t>,
    snapshot: &GraphSnapshot,
) -> Result<Var<'t>, ModelError> {
    Ok(attention_with_projection(bound, snapshot)?.0)
}

pub(super) fn predict<'t>(
    bound: &BoundParams<'t>,
    snapshot: &GraphSnapshot,
) -> Result<Var<'t>, ModelError> {
    let (alpha, wx) = attention_with_projection(bound, snapshot)?;
    let h = alpha.matmul(&wx)?.relu()?;
    Ok(dense(&h, bound.get("gat.w_out")?, bound.get("gat.b_out")?)?)
}
