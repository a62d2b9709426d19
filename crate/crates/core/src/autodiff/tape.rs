use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use super::{AutodiffError, Result, SparseMatrix, Tensor};

#[derive(Debug, Clone)]
enum Op {
    /// Constant or leaf; nothing to propagate further.
    Source,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sum(usize),
    Mean(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Square(usize),
    Powf(usize, f64),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Transpose(usize),
    SpMM(Arc<SparseMatrix>, usize),
    MaskedSoftmax(usize, Arc<Vec<bool>>),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of one forward pass.
///
/// Nodes are appended in creation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, tensor: &Tensor) -> Var<'_> {
        self.push_source(tensor.shape().to_vec(), tensor.data().to_vec(), false)
    }

    /// Records a differentiable leaf.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push_source(tensor.shape().to_vec(), tensor.data().to_vec(), true)
    }

    pub fn column(&self, values: &[f64]) -> Var<'_> {
        self.push_source(vec![values.len(), 1], values.to_vec(), false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push_source(vec![1], vec![value], false)
    }

    fn push_source(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            op: Op::Source,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var<'_>> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            shape,
            data,
            // Constant subgraphs keep no history.
            op: if requires_grad { op } else { Op::Source },
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.data.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: root.shape.clone(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        adj[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            propagate(&nodes, node, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Gradients { adj })
    }
}

fn accum<'a>(adj: &'a mut [Option<Vec<f64>>], nodes: &[Node], idx: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let n = nodes[idx].data.len();
    Some(adj[idx].get_or_insert_with(|| vec![0.0; n]))
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Source => {}
        Op::Add(a, b) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            if let Some(gb) = accum(adj, nodes, *b) {
                gb.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            if let Some(gb) = accum(adj, nodes, *b) {
                gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].data, &nodes[*b].data);
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), y) in ga.iter_mut().zip(g).zip(bv) {
                    *x += d * y;
                }
            }
            if let Some(gb) = accum(adj, nodes, *b) {
                for ((x, d), y) in gb.iter_mut().zip(g).zip(av) {
                    *x += d * y;
                }
            }
        }
        Op::AddRow(a, row) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
            let cols = nodes[*row].data.len();
            if let Some(gr) = accum(adj, nodes, *row) {
                for chunk in g.chunks(cols) {
                    gr.iter_mut().zip(chunk).for_each(|(x, d)| *x += d);
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = dims2(&nodes[*a].shape);
            let n = nodes[*b].shape[1];
            let (av, bv) = (&nodes[*a].data, &nodes[*b].data);
            if let Some(ga) = accum(adj, nodes, *a) {
                // dA = G · Bᵀ
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if let Some(gb) = accum(adj, nodes, *b) {
                // dB = Aᵀ · G
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = av[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += a_ip * g[i * n + j];
                        }
                    }
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += k * d);
            }
        }
        Op::AddScalar(a) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = accum(adj, nodes, *a) {
                let scale = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += scale);
            }
        }
        Op::Relu(a) => {
            let av = &nodes[*a].data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), v) in ga.iter_mut().zip(g).zip(av) {
                    if *v > 0.0 {
                        *x += d;
                    }
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let av = &nodes[*a].data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), v) in ga.iter_mut().zip(g).zip(av) {
                    if *v > 0.0 {
                        *x += d;
                    } else if *v < 0.0 {
                        *x += slope * d;
                    }
                }
            }
        }
        Op::Tanh(a) => {
            let y = &node.data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), y) in ga.iter_mut().zip(g).zip(y) {
                    *x += d * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = &node.data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), y) in ga.iter_mut().zip(g).zip(y) {
                    *x += d * y * (1.0 - y);
                }
            }
        }
        Op::Square(a) => {
            let av = &nodes[*a].data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), v) in ga.iter_mut().zip(g).zip(av) {
                    *x += 2.0 * v * d;
                }
            }
        }
        Op::Powf(a, k) => {
            let av = &nodes[*a].data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for ((x, d), v) in ga.iter_mut().zip(g).zip(av) {
                    *x += k * v.powf(k - 1.0) * d;
                }
            }
        }
        Op::Concat(inputs, axis) => {
            let (rows, cols) = dims2(&node.shape);
            let mut offset = 0;
            for &inp in inputs {
                let (r, c) = dims2(&nodes[inp].shape);
                if let Some(gi) = accum(adj, nodes, inp) {
                    if *axis == 0 {
                        for (x, d) in gi.iter_mut().zip(&g[offset * cols..(offset + r) * cols]) {
                            *x += d;
                        }
                    } else {
                        for i in 0..rows {
                            for j in 0..c {
                                gi[i * c + j] += g[i * cols + offset + j];
                            }
                        }
                    }
                }
                offset += if *axis == 0 { r } else { c };
            }
        }
        Op::Slice { input, axis, start } => {
            let (_, in_cols) = dims2(&nodes[*input].shape);
            let (rows, cols) = dims2(&node.shape);
            if let Some(gi) = accum(adj, nodes, *input) {
                for i in 0..rows {
                    for j in 0..cols {
                        let (si, sj) = if *axis == 0 { (i + start, j) } else { (i, j + start) };
                        gi[si * in_cols + sj] += g[i * cols + j];
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (rows, cols) = dims2(&nodes[*a].shape);
            if let Some(ga) = accum(adj, nodes, *a) {
                for i in 0..rows {
                    for j in 0..cols {
                        ga[i * cols + j] += g[j * rows + i];
                    }
                }
            }
        }
        Op::SpMM(mat, x) => {
            let k = nodes[*x].shape[1];
            if let Some(gx) = accum(adj, nodes, *x) {
                for i in 0..mat.rows() {
                    let src = &g[i * k..(i + 1) * k];
                    for &(j, w) in mat.row(i) {
                        for (dst, s) in gx[j * k..(j + 1) * k].iter_mut().zip(src) {
                            *dst += w * s;
                        }
                    }
                }
            }
        }
        Op::MaskedSoftmax(a, mask) => {
            let (rows, cols) = dims2(&node.shape);
            let y = &node.data;
            if let Some(ga) = accum(adj, nodes, *a) {
                for i in 0..rows {
                    let r = i * cols..(i + 1) * cols;
                    let mut dot = 0.0;
                    for idx in r.clone() {
                        if mask[idx] {
                            dot += g[idx] * y[idx];
                        }
                    }
                    for idx in r {
                        if mask[idx] {
                            ga[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `var` is not connected to the loss or does not require grad.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.adj.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, zeros when disconnected.
    pub fn wrt(&self, var: Var<'_>) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; var.numel()])
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].data.len()
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].data.clone()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let d = &nodes[self.id].data;
        assert_eq!(d.len(), 1, "item() on a var with {} elements", d.len());
        d[0]
    }

    pub fn to_tensor(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape values are finite")
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn unary(
        &self,
        name: &'static str,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|&v| f(v)).collect())
        };
        self.tape.push(name, shape, data, op, &[self.id])
    }

    fn elementwise(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: a.shape.clone(),
                    right: b.shape.clone(),
                });
            }
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), data)
        };
        self.tape.push(name, shape, data, op, &[self.id, other.id])
    }

    fn require_2d(&self, name: &'static str) -> Result<(usize, usize)> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(AutodiffError::InvalidShape {
                op: name,
                shape,
                reason: "expected a 2-d tensor".into(),
            });
        }
        Ok((shape[0], shape[1]))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a `1 × C` row to every row of an `R × C` matrix (bias broadcast).
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(row);
        let (rows, cols) = self.require_2d("add_row")?;
        let rshape = row.shape();
        if rshape.iter().product::<usize>() != cols || rshape.last() != Some(&cols) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: vec![rows, cols],
                right: rshape,
            });
        }
        let data = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].data, &nodes[row.id].data);
            a.iter().enumerate().map(|(i, v)| v + b[i % cols]).collect()
        };
        self.tape.push(
            "add_row",
            vec![rows, cols],
            data,
            Op::AddRow(self.id, row.id),
            &[self.id, row.id],
        )
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: ls,
                right: rs,
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let data = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].data, &nodes[other.id].data);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let a_ip = a[i * k + p];
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *o += a_ip * bv;
                    }
                }
            }
            out
        };
        self.tape.push(
            "matmul",
            vec![m, n],
            data,
            Op::MatMul(self.id, other.id),
            &[self.id, other.id],
        )
    }

    pub fn scale(&self, k: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, k), |v| k * v)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, k: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |v| v + k)
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let s = self.tape.nodes.borrow()[self.id].data.iter().sum();
        self.tape.push("sum", vec![1], vec![s], Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let m = {
            let nodes = self.tape.nodes.borrow();
            let d = &nodes[self.id].data;
            if d.is_empty() {
                return Err(AutodiffError::InvalidShape {
                    op: "mean",
                    shape: nodes[self.id].shape.clone(),
                    reason: "mean of an empty tensor".into(),
                });
            }
            d.iter().sum::<f64>() / d.len() as f64
        };
        self.tape.push("mean", vec![1], vec![m], Op::Mean(self.id), &[self.id])
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Leaky ReLU; the derivative at exactly 0 is taken as 0.
    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'t>> {
        self.unary("leaky_relu", Op::LeakyRelu(self.id, slope), |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.id), |v| v * v)
    }

    pub fn powf(&self, k: f64) -> Result<Var<'t>> {
        self.unary("powf", Op::Powf(self.id, k), |v| v.powf(k))
    }

    /// Concatenates 2-d vars along `axis` (0 = rows, 1 = columns).
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| AutodiffError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "nothing to concatenate".into(),
        })?;
        if axis > 1 {
            return Err(AutodiffError::InvalidShape {
                op: "concat",
                shape: first.shape(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let tape = first.tape;
        let (shape, data) = {
            let nodes = tape.nodes.borrow();
            let base = &nodes[first.id].shape;
            let mut shape = base.clone();
            shape[axis] = 0;
            for p in parts {
                first.same_tape(p);
                let s = &nodes[p.id].shape;
                if s.len() != 2 || s[1 - axis] != base[1 - axis] {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat",
                        left: base.clone(),
                        right: s.clone(),
                    });
                }
                shape[axis] += s[axis];
            }
            let mut data = Vec::with_capacity(shape[0] * shape[1]);
            if axis == 0 {
                for p in parts {
                    data.extend_from_slice(&nodes[p.id].data);
                }
            } else {
                for i in 0..shape[0] {
                    for p in parts {
                        let c = nodes[p.id].shape[1];
                        data.extend_from_slice(&nodes[p.id].data[i * c..(i + 1) * c]);
                    }
                }
            }
            (shape, data)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push("concat", shape, data, Op::Concat(ids.clone(), axis), &ids)
    }

    /// Rows or columns `start..end` of a 2-d var.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let (rows, cols) = self.require_2d("slice")?;
        let limit = if axis == 0 { rows } else { cols };
        if axis > 1 || start >= end || end > limit {
            return Err(AutodiffError::InvalidShape {
                op: "slice",
                shape: vec![rows, cols],
                reason: format!("range {start}..{end} on axis {axis}"),
            });
        }
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let d = &nodes[self.id].data;
            if axis == 0 {
                (vec![end - start, cols], d[start * cols..end * cols].to_vec())
            } else {
                let w = end - start;
                let mut out = Vec::with_capacity(rows * w);
                for i in 0..rows {
                    out.extend_from_slice(&d[i * cols + start..i * cols + end]);
                }
                (vec![rows, w], out)
            }
        };
        self.tape.push(
            "slice",
            shape,
            data,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            &[self.id],
        )
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let (rows, cols) = self.require_2d("transpose")?;
        let data = {
            let nodes = self.tape.nodes.borrow();
            let d = &nodes[self.id].data;
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j * rows + i] = d[i * cols + j];
                }
            }
            out
        };
        self.tape
            .push("transpose", vec![cols, rows], data, Op::Transpose(self.id), &[self.id])
    }

    /// Applies a constant sparse operator: `mat · self`.
    pub fn spmm(&self, mat: &Arc<SparseMatrix>) -> Result<Var<'t>> {
        let (rows, k) = self.require_2d("spmm")?;
        if rows != mat.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                left: vec![mat.rows(), mat.cols()],
                right: vec![rows, k],
            });
        }
        let data = mat.apply(&self.tape.nodes.borrow()[self.id].data, k);
        self.tape.push(
            "spmm",
            vec![mat.rows(), k],
            data,
            Op::SpMM(Arc::clone(mat), self.id),
            &[self.id],
        )
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked-out
    /// entries are exactly 0. Every row must keep at least one entry.
    pub fn masked_softmax_rows(&self, mask: &Arc<Vec<bool>>) -> Result<Var<'t>> {
        let (rows, cols) = self.require_2d("masked_softmax")?;
        if mask.len() != rows * cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_softmax",
                left: vec![rows, cols],
                right: vec![mask.len()],
            });
        }
        let data = {
            let nodes = self.tape.nodes.borrow();
            let d = &nodes[self.id].data;
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                let r = i * cols..(i + 1) * cols;
                let max = r
                    .clone()
                    .filter(|&idx| mask[idx])
                    .map(|idx| d[idx])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(AutodiffError::InvalidShape {
                        op: "masked_softmax",
                        shape: vec![rows, cols],
                        reason: format!("row {i} has no unmasked entry"),
                    });
                }
                let mut z = 0.0;
                for idx in r.clone() {
                    if mask[idx] {
                        out[idx] = (d[idx] - max).exp();
                        z += out[idx];
                    }
                }
                for idx in r {
                    out[idx] /= z;
                }
            }
            out
        };
        self.tape.push(
            "masked_softmax",
            vec![rows, cols],
            data,
            Op::MaskedSoftmax(self.id, Arc::clone(mask)),
            &[self.id],
        )
    }
}
