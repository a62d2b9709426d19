use std::sync::Arc;

use phygraph::autodiff::{
    fd_gradient, max_relative_error, AutodiffError, ParamSet, SparseMatrix, Tape, Tensor, Var,
};
use proptest::prelude::*;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;
const FLOOR: f64 = 1e-4;

type OpFn = for<'t> fn(&[Var<'t>]) -> Result<Var<'t>, AutodiffError>;

// Deterministic loss weights in [0.5, 1.5) so no output entry is ignored.
fn weights(n: usize, seed: u64) -> Vec<f64> {
    (0..n as u64)
        .map(|k| 0.5 + ((k * 2654435761 + seed) % 1000) as f64 / 1000.0)
        .collect()
}

/// Builds `sum(weights ⊙ op(inputs))` and compares backward against central
/// differences over every input entry.
fn check(op: OpFn, inputs: &[Tensor], weights_seed: u64) {
    let mut params = ParamSet::new(0);
    for (i, t) in inputs.iter().enumerate() {
        params.insert(format!("x{i}"), t.clone()).unwrap();
    }
    let loss_on = |tape: &Tape, p: &ParamSet| -> Result<(Vec<f64>, f64), AutodiffError> {
        let bound = p.bind(tape);
        let vars: Vec<Var> = (0..inputs.len())
            .map(|i| bound.get(&format!("x{i}")).unwrap())
            .collect();
        let out = op(&vars)?;
        let n = out.numel();
        let w = weights(n, weights_seed);
        let wt = tape.constant(&Tensor::new(out.shape(), w).unwrap());
        let loss = out.mul(&wt)?.sum()?;
        Ok((out.value(), loss.item()))
    };

    let tape = Tape::new();
    let bound = params.bind(&tape);
    let vars: Vec<Var> = (0..inputs.len())
        .map(|i| bound.get(&format!("x{i}")).unwrap())
        .collect();
    let out = op(&vars).unwrap();
    let n = out.numel();
    let w = weights(n, weights_seed);
    let wt = tape.constant(&Tensor::new(out.shape(), w).unwrap());
    let loss = out.mul(&wt).unwrap().sum().unwrap();
    params.backward(&bound, loss).unwrap();

    let fd = fd_gradient(
        |p| {
            let t = Tape::new();
            loss_on(&t, p).map(|(_, l)| l)
        },
        &params,
        EPS,
    )
    .unwrap();
    for (name, t) in params.iter() {
        let err = max_relative_error(t.grad().unwrap(), &fd[name], FLOOR);
        assert!(err < TOL, "{name}: rel err {err}");
    }
}

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn away_from_zero(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(
        prop_oneof![-2.0f64..-1e-3, 1e-3f64..2.0],
        rows * cols,
    )
    .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binary_elementwise(a in mat(3, 2), b in mat(3, 2), s in 0u64..100) {
        check(|v| v[0].add(&v[1]), &[a.clone(), b.clone()], s);
        check(|v| v[0].sub(&v[1]), &[a.clone(), b.clone()], s);
        check(|v| v[0].mul(&v[1]), &[a, b], s);
    }

    #[test]
    fn matmul_and_bias(a in mat(3, 4), b in mat(4, 2), r in mat(1, 2), s in 0u64..100) {
        check(|v| v[0].matmul(&v[1]), &[a.clone(), b.clone()], s);
        check(|v| v[0].matmul(&v[1])?.add_row(&v[2]), &[a, b, r], s);
    }

    #[test]
    fn scalar_and_reductions(a in mat(2, 3), s in 0u64..100) {
        check(|v| v[0].scale(-1.7), &[a.clone()], s);
        check(|v| v[0].add_scalar(0.3), &[a.clone()], s);
        check(|v| v[0].sum(), &[a.clone()], s);
        check(|v| v[0].mean(), &[a.clone()], s);
        check(|v| v[0].square(), &[a.clone()], s);
        check(|v| v[0].powf(3.0), &[a], s);
    }

    #[test]
    fn smooth_activations(a in mat(3, 3), s in 0u64..100) {
        check(|v| v[0].tanh(), &[a.clone()], s);
        check(|v| v[0].sigmoid(), &[a], s);
    }

    #[test]
    fn piecewise_activations(a in away_from_zero(3, 3), s in 0u64..100) {
        check(|v| v[0].relu(), &[a.clone()], s);
        check(|v| v[0].leaky_relu(0.2), &[a], s);
    }

    #[test]
    fn structural(a in mat(3, 2), b in mat(3, 1), c in mat(2, 2), s in 0u64..100) {
        check(|v| Var::concat(&[v[0], v[1]], 1), &[a.clone(), b], s);
        check(|v| Var::concat(&[v[0], v[1]], 0), &[a.clone(), c], s);
        check(|v| v[0].slice(1, 1, 2), &[a.clone()], s);
        check(|v| v[0].slice(0, 0, 2), &[a.clone()], s);
        check(|v| v[0].transpose(), &[a], s);
    }

    #[test]
    fn sparse_and_softmax(x in mat(3, 2), logits in mat(3, 3), s in 0u64..100) {
        check(
            |v| {
                let m = Arc::new(SparseMatrix::from_rows(
                    3,
                    vec![vec![(0, 0.5), (2, -1.0)], vec![], vec![(1, 2.0), (1, 0.25)]],
                ));
                v[0].spmm(&m)
            },
            &[x],
            s,
        );
        check(
            |v| {
                let mask = Arc::new(vec![true, false, true, true, true, true, false, false, true]);
                v[0].masked_softmax_rows(&mask)
            },
            &[logits],
            s,
        );
    }
}

fn replay(values: &[f64]) -> (u64, Vec<u64>) {
    let mut p = ParamSet::new(0);
    p.insert("w", Tensor::matrix(2, 2, values.to_vec()).unwrap()).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape);
    let w = b.get("w").unwrap();
    let loss = w
        .matmul(&w)
        .and_then(|m| m.tanh())
        .and_then(|m| m.square())
        .and_then(|m| m.mean())
        .unwrap();
    p.backward(&b, loss).unwrap();
    (
        loss.item().to_bits(),
        p.flat_grads().iter().map(|g| g.to_bits()).collect(),
    )
}

#[test]
fn replay_is_bitwise_deterministic() {
    let v = [0.3, -1.2, 0.8, 1.9];
    assert_eq!(replay(&v), replay(&v));
}
