//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every op evaluates eagerly and appends a node to the [`Tape`]. Nodes are
//! only ever appended, so node ids are already a topological order and
//! [`Tape::backward`] is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{gemm_nt, gemm_tn, transpose, Tensor};

/// Epsilon used by [`Tape::layer_norm`] throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Rows whose L2 norm falls below this are treated as zero-norm.
pub const ZERO_NORM: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Silu(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Softmax { input: usize, axis: usize },
    LayerNorm { input: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    L2Normalize { input: usize, norms: Vec<f64> },
    SliceCols { input: usize, start: usize },
    ConcatCols(Vec<usize>),
    SliceRows { input: usize, start: usize },
    ConcatRows(Vec<usize>),
    Gather { input: usize, index: Vec<usize> },
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record.
///
/// A tape is single-threaded: build it, call [`Tape::backward`] once, drop it.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`. Nodes off every path to the loss get zeros.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "gradient lookup with a var from another tape");
        self.grads[v.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.id].clone()))
    }

    /// Like [`Gradients::get`] but returns `None` for off-path nodes.
    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], delta: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape")),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Rows of the last axis: `(rows, width)`. A scalar or vector is a single row.
fn row_layout(shape: &[usize]) -> (usize, usize) {
    let width = shape.last().copied().unwrap_or(1);
    let total: usize = shape.iter().product();
    (total / width, width)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::DetachedVar {
                expected: self.id,
                found: v.tape,
            });
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id, tape: self.id }
    }

    /// Registers a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("var from another tape");
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let out = crate::tensor::matmul(self.val(ai), self.val(bi))?;
        Ok(self.push(out, Op::MatMul(ai, bi), &[ai, bi]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let out = transpose(self.val(ai))?;
        Ok(self.push(out, Op::Transpose(ai), &[ai]))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (self.val(ai), self.val(bi));
        let out = if va.shape() == vb.shape() {
            va.zip_map(vb, op, f)?
        } else if vb.numel() == 1 && vb.shape().len() <= 1 {
            let s = vb.item();
            va.map(|x| f(x, s))
        } else if va.numel() == 1 && va.shape().len() <= 1 {
            let s = va.item();
            vb.map(|x| f(s, x))
        } else {
            return Err(Error::shape(op, va.shape(), vb.shape()));
        };
        Ok((ai, bi, out))
    }

    /// Elementwise sum; equal shapes, or one operand a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, out) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(ai, bi), &[ai, bi]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, out) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(ai, bi), &[ai, bi]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, out) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(ai, bi), &[ai, bi]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let out = self.val(ai).map(|x| x * c);
        Ok(self.push(out, Op::Scale(ai, c), &[ai]))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let out = self.val(ai).map(|x| x + c);
        Ok(self.push(out, Op::AddConst(ai), &[ai]))
    }

    fn row_operands(&self, x: Var, r: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        let (xi, ri) = (self.check(x)?, self.check(r)?);
        let (_, cols) = self.val(xi).dims2(op)?;
        if self.val(ri).numel() != cols {
            return Err(Error::shape(op, self.val(xi).shape(), self.val(ri).shape()));
        }
        Ok((xi, ri, cols))
    }

    /// Adds a row vector (`[d]` or `[1×d]`) to every row of `x [n×d]`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xi, ri, cols) = self.row_operands(x, r, "add_row")?;
        let rv = self.val(ri).data();
        let mut out = self.val(xi).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += rv[i % cols];
        }
        Ok(self.push(out, Op::AddRow(xi, ri), &[xi, ri]))
    }

    /// Multiplies every row of `x [n×d]` elementwise by a row vector.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xi, ri, cols) = self.row_operands(x, r, "mul_row")?;
        let rv = self.val(ri).data();
        let mut out = self.val(xi).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= rv[i % cols];
        }
        Ok(self.push(out, Op::MulRow(xi, ri), &[xi, ri]))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let out = self.val(ai).map(|x| x * sigmoid(x));
        Ok(self.push(out, Op::Silu(ai), &[ai]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let out = self.val(ai).map(|x| x * x);
        Ok(self.push(out, Op::Square(ai), &[ai]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let out = Tensor::scalar(self.val(ai).sum());
        Ok(self.push(out, Op::Sum(ai), &[ai]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let out = Tensor::scalar(self.val(ai).mean());
        Ok(self.push(out, Op::Mean(ai), &[ai]))
    }

    /// Softmax along `axis`, computed after subtracting the per-slice max.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.val(ai);
        if axis >= x.shape().len().max(1) {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", x.shape()),
            ));
        }
        let shape = if x.shape().is_empty() { vec![1] } else { x.shape().to_vec() };
        let (outer, len, inner) = axis_layout(&shape, axis);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| xd[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (xd[at(l)] - max).exp();
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Softmax { input: ai, axis }, &[ai]))
    }

    /// Per-row (last axis) normalization to zero mean and unit variance, no affine.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.val(ai);
        let (rows, width) = row_layout(x.shape());
        let mut xhat = vec![0.0; x.numel()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &x.data()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for (o, v) in xhat[r * width..(r + 1) * width].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), xhat.clone())?;
        Ok(self.push(out, Op::LayerNorm { input: ai, xhat, rstd }, &[ai]))
    }

    /// Scales each row (last axis) to unit L2 norm. Zero-norm rows map to zeros.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.val(ai);
        let (rows, width) = row_layout(x.shape());
        let mut out = x.data().to_vec();
        let mut norms = vec![0.0; rows];
        for r in 0..rows {
            let row = &mut out[r * width..(r + 1) * width];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = n;
            if n < ZERO_NORM {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(out, Op::L2Normalize { input: ai, norms }, &[ai]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.val(ai);
        let (rows, cols) = x.dims2("slice_cols")?;
        if len == 0 || start + len > cols {
            return Err(Error::invalid(
                "slice_cols",
                format!("columns {start}..{} out of range for width {cols}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let out = Tensor::new([rows, len], out)?;
        Ok(self.push(out, Op::SliceCols { input: ai, start }, &[ai]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let (rows, _) = self.val(*first).dims2("concat_cols")?;
        let mut total = 0;
        for &i in &ids {
            let (r, c) = self.val(i).dims2("concat_cols")?;
            if r != rows {
                return Err(Error::shape("concat_cols", self.val(*first).shape(), self.val(i).shape()));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &ids {
                out.extend_from_slice(self.val(i).row(r));
            }
        }
        let out = Tensor::new([rows, total], out)?;
        Ok(self.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.val(ai);
        let (rows, cols) = x.dims2("slice_rows")?;
        if len == 0 || start + len > rows {
            return Err(Error::invalid(
                "slice_rows",
                format!("rows {start}..{} out of range for {rows} rows", start + len),
            ));
        }
        let out = Tensor::new([len, cols], x.data()[start * cols..(start + len) * cols].to_vec())?;
        Ok(self.push(out, Op::SliceRows { input: ai, start }, &[ai]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        let (_, cols) = self.val(*first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &ids {
            let (r, c) = self.val(i).dims2("concat_rows")?;
            if c != cols {
                return Err(Error::shape("concat_rows", self.val(*first).shape(), self.val(i).shape()));
            }
            rows += r;
            out.extend_from_slice(self.val(i).data());
        }
        let out = Tensor::new([rows, cols], out)?;
        Ok(self.push(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// `out.flat[i] = a.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let ai = self.check(a)?;
        let x = self.val(ai);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.numel()) {
            return Err(Error::invalid("gather", format!("index {bad} out of range for {} elements", x.numel())));
        }
        let out = Tensor::new(shape, index.iter().map(|&i| x.data()[i]).collect())?;
        Ok(self.push(out, Op::Gather { input: ai, index }, &[ai]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ai = self.check(a)?;
        let out = self.val(ai).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ai), &[ai]))
    }

    /// Clears the consumed flag so `backward` may run again on this tape.
    pub fn reset(&mut self) {
        self.consumed = false;
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let li = self.check(loss)?;
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        let loss_shape = self.val(li).shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[li] = Some(Tensor::ones(loss_shape));

        for idx in (0..=li).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let wants = |i: usize| self.nodes[i].requires_grad;
        let shape_of = |i: usize| self.nodes[i].value.shape().to_vec();
        let send = |grads: &mut [Option<Tensor>], i: usize, delta: Vec<f64>| {
            if wants(i) {
                accumulate(&mut grads[i], &shape_of(i), delta);
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let p = vb.shape()[1];
                if wants(*a) {
                    send(grads, *a, gemm_nt(gd, vb.data(), m, p, k));
                }
                if wants(*b) {
                    send(grads, *b, gemm_tn(va.data(), gd, m, k, p));
                }
            }
            Op::Transpose(a) => {
                let t = transpose(g).expect("2-D gradient");
                send(grads, *a, t.into_data());
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (i, s) in [(*a, 1.0), (*b, sign)] {
                    if !wants(i) {
                        continue;
                    }
                    let delta = if self.val(i).shape() == g.shape() {
                        gd.iter().map(|v| s * v).collect()
                    } else {
                        vec![s * g.sum()]
                    };
                    send(grads, i, delta);
                }
            }
            Op::Mul(a, b) => {
                for (i, other) in [(*a, *b), (*b, *a)] {
                    if !wants(i) {
                        continue;
                    }
                    let (vi, vo) = (self.val(i), self.val(other));
                    let delta = if vi.shape() == g.shape() {
                        if vo.shape() == g.shape() {
                            gd.iter().zip(vo.data()).map(|(g, o)| g * o).collect()
                        } else {
                            let s = vo.item();
                            gd.iter().map(|g| g * s).collect()
                        }
                    } else {
                        vec![gd.iter().zip(vo.data()).map(|(g, o)| g * o).sum()]
                    };
                    send(grads, i, delta);
                }
            }
            Op::Scale(a, c) => send(grads, *a, gd.iter().map(|v| v * c).collect()),
            Op::AddConst(a) | Op::Reshape(a) => send(grads, *a, gd.to_vec()),
            Op::AddRow(x, r) => {
                let cols = self.val(*r).numel();
                if wants(*x) {
                    send(grads, *x, gd.to_vec());
                }
                if wants(*r) {
                    let mut acc = vec![0.0; cols];
                    for (i, v) in gd.iter().enumerate() {
                        acc[i % cols] += v;
                    }
                    send(grads, *r, acc);
                }
            }
            Op::MulRow(x, r) => {
                let rv = self.val(*r).data();
                let cols = rv.len();
                if wants(*x) {
                    send(grads, *x, gd.iter().enumerate().map(|(i, v)| v * rv[i % cols]).collect());
                }
                if wants(*r) {
                    let xv = self.val(*x).data();
                    let mut acc = vec![0.0; cols];
                    for (i, (v, xx)) in gd.iter().zip(xv).enumerate() {
                        acc[i % cols] += v * xx;
                    }
                    send(grads, *r, acc);
                }
            }
            Op::Silu(a) => {
                let xv = self.val(*a).data();
                let delta = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                send(grads, *a, delta);
            }
            Op::Square(a) => {
                let xv = self.val(*a).data();
                send(grads, *a, gd.iter().zip(xv).map(|(g, x)| 2.0 * x * g).collect());
            }
            Op::Sum(a) => {
                let n = self.val(*a).numel();
                send(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.val(*a).numel();
                send(grads, *a, vec![gd[0] / n as f64; n]);
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let shape = if node.value.shape().is_empty() { vec![1] } else { node.value.shape().to_vec() };
                let (outer, len, inner) = axis_layout(&shape, *axis);
                let mut delta = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| gd[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            delta[at(l)] = y[at(l)] * (gd[at(l)] - dot);
                        }
                    }
                }
                send(grads, *input, delta);
            }
            Op::LayerNorm { input, xhat, rstd } => {
                let (rows, width) = row_layout(node.value.shape());
                let w = width as f64;
                let mut delta = vec![0.0; gd.len()];
                for r in 0..rows {
                    let span = r * width..(r + 1) * width;
                    let (gr, xr) = (&gd[span.clone()], &xhat[span.clone()]);
                    let mean_g = gr.iter().sum::<f64>() / w;
                    let mean_gx = gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>() / w;
                    for ((d, g), x) in delta[span].iter_mut().zip(gr).zip(xr) {
                        *d = rstd[r] * (g - mean_g - x * mean_gx);
                    }
                }
                send(grads, *input, delta);
            }
            Op::L2Normalize { input, norms } => {
                let (rows, width) = row_layout(node.value.shape());
                let y = node.value.data();
                let mut delta = vec![0.0; gd.len()];
                for r in 0..rows {
                    if norms[r] < ZERO_NORM {
                        continue;
                    }
                    let span = r * width..(r + 1) * width;
                    let dot: f64 = gd[span.clone()].iter().zip(&y[span.clone()]).map(|(g, y)| g * y).sum();
                    for ((d, g), yv) in delta[span.clone()].iter_mut().zip(&gd[span.clone()]).zip(&y[span]) {
                        *d = (g - yv * dot) / norms[r];
                    }
                }
                send(grads, *input, delta);
            }
            Op::SliceCols { input, start } => {
                let (rows, cols) = (self.val(*input).shape()[0], self.val(*input).shape()[1]);
                let len = node.value.shape()[1];
                let mut delta = vec![0.0; rows * cols];
                for r in 0..rows {
                    delta[r * cols + start..r * cols + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                send(grads, *input, delta);
            }
            Op::ConcatCols(ids) => {
                let total = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for &i in ids {
                    let c = self.val(i).shape()[1];
                    if wants(i) {
                        let mut delta = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            delta.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                        }
                        send(grads, i, delta);
                    }
                    offset += c;
                }
            }
            Op::SliceRows { input, start } => {
                let full = self.val(*input).numel();
                let cols = node.value.shape()[1];
                let mut delta = vec![0.0; full];
                delta[start * cols..start * cols + gd.len()].copy_from_slice(gd);
                send(grads, *input, delta);
            }
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &i in ids {
                    let n = self.val(i).numel();
                    if wants(i) {
                        send(grads, i, gd[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Gather { input, index } => {
                let mut delta = vec![0.0; self.val(*input).numel()];
                for (g, &i) in gd.iter().zip(index) {
                    delta[i] += g;
                }
                send(grads, *input, delta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Analytic vs finite-difference gradient for a unary tape function.
    fn check_unary(build: impl Fn(&mut Tape, Var) -> Result<Var>, x: &Tensor, tol: f64) {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let loss = build(&mut tape, xv).unwrap();
        let analytic = tape.backward(loss).unwrap().get(xv);
        let numeric = finite_diff_grad(
            |t| {
                let mut tape = Tape::new();
                let v = tape.constant(t.clone());
                let l = build(&mut tape, v).unwrap();
                tape.value(l).item()
            },
            x,
            1e-5,
        );
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < tol, "relative error {err}");
    }

    #[test]
    fn matmul_identity_and_by_hand() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let b = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([4, 2]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut r = rng(7);
        let a = Tensor::rand_uniform([3, 4], -1.0, 1.0, &mut r);
        let b = Tensor::rand_uniform([4, 2], -1.0, 1.0, &mut r);
        let bb = b.clone();
        check_unary(
            move |tape, a| {
                let b = tape.constant(bb.clone());
                let c = tape.matmul(a, b)?;
                tape.sum(c)
            },
            &a,
            1e-6,
        );
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(Tensor::from_vec(vec![1000.0, 1000.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
        let x = tape.constant(Tensor::from_vec(vec![0.0, 3f64.ln()]));
        let y = tape.softmax(x, 0).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 2]));
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn softmax_axis0_of_matrix() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]));
        let y = tape.layer_norm(x, LAYER_NORM_EPS).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -1.0]]));
        let y = tape.layer_norm(x, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -1.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let y = tape.silu(z).unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
        let v = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let n = tape.l2_normalize(v).unwrap();
        let d = tape.value(n).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros([2]));
        let b = tape.constant(Tensor::zeros([3]));
        assert!(matches!(tape.add(a, b), Err(Error::ShapeMismatch { .. })));
        let c = tape.constant(Tensor::zeros([2, 2]));
        let r = tape.constant(Tensor::zeros([3]));
        assert!(tape.add_row(c, r).is_err());
    }

    #[test]
    fn backward_square_at_three() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let l = tape.square(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn backward_twice_is_an_error_until_reset() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let l = tape.square(x).unwrap();
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::BackwardConsumed)));
        tape.reset();
        assert!(tape.backward(l).is_ok());
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_vars() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let mut other = Tape::new();
        let y = other.param(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(y), Err(Error::DetachedVar { .. })));
        assert!(matches!(tape.square(y), Err(Error::DetachedVar { .. })));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::zeros([3, 2]));
        let l = tape.square(x).unwrap();
        let g = tape.backward(l).unwrap();
        let gu = g.get(unused);
        assert_eq!(gu.shape(), &[3, 2]);
        assert!(gu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_op_gradients_match_finite_differences() {
        let mut r = rng(11);
        let x = Tensor::rand_uniform([4, 8], -1.0, 1.0, &mut r);
        let w = Tensor::rand_uniform([4, 8], -1.0, 1.0, &mut r);
        let row = Tensor::rand_uniform([1, 8], -1.0, 1.0, &mut r);
        let tol = 1e-5;

        // Each reduces to a scalar through a fixed random weighting so that
        // gradients are not trivially uniform.
        type Build = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;
        let weighted = |w: Tensor| -> Box<dyn Fn(&mut Tape, Var) -> Result<Var>> {
            Box::new(move |tape: &mut Tape, y: Var| {
                let wv = tape.constant(w.clone());
                let p = tape.mul(y, wv)?;
                tape.sum(p)
            })
        };
        let cases: Vec<(&str, Build)> = vec![
            ("layer_norm", {
                let f = weighted(w.clone());
                Box::new(move |t, x| {
                    let y = t.layer_norm(x, LAYER_NORM_EPS)?;
                    f(t, y)
                })
            }),
            ("softmax1", {
                let f = weighted(w.clone());
                Box::new(move |t, x| {
                    let y = t.softmax(x, 1)?;
                    f(t, y)
                })
            }),
            ("softmax0", {
                let f = weighted(w.clone());
                Box::new(move |t, x| {
                    let y = t.softmax(x, 0)?;
                    f(t, y)
                })
            }),
            ("silu", {
                let f = weighted(w.clone());
                Box::new(move |t, x| {
                    let y = t.silu(x)?;
                    f(t, y)
                })
            }),
            ("square_mean", Box::new(|t, x| {
                let y = t.square(x)?;
                t.mean(y)
            })),
            ("l2_normalize", {
                let f = weighted(w.clone());
                Box::new(move |t, x| {
                    let y = t.l2_normalize(x)?;
                    f(t, y)
                })
            }),
            ("mul_row_add_row", {
                let f = weighted(w.clone());
                let row = row.clone();
                Box::new(move |t, x| {
                    let r = t.constant(row.clone());
                    let y = t.mul_row(x, r)?;
                    let y = t.add_row(y, r)?;
                    f(t, y)
                })
            }),
            ("slices_concats_transpose", {
                let f = weighted(w.clone());
                Box::new(move |t, x| {
                    let a = t.slice_cols(x, 0, 3)?;
                    let b = t.slice_cols(x, 3, 5)?;
                    let c = t.concat_cols(&[b, a])?;
                    let top = t.slice_rows(c, 0, 1)?;
                    let rest = t.slice_rows(c, 1, 3)?;
                    let c = t.concat_rows(&[rest, top])?;
                    let ct = t.transpose(c)?;
                    let c = t.transpose(ct)?;
                    let s = t.scale(c, -0.7)?;
                    let s = t.add_const(s, 0.2)?;
                    f(t, s)
                })
            }),
            ("gather_reshape", Box::new(|t, x| {
                let idx: Vec<usize> = (0..32).rev().chain(0..4).collect();
                let g = t.gather(x, idx, vec![36])?;
                let g = t.reshape(g, vec![6, 6])?;
                let g = t.square(g)?;
                t.sum(g)
            })),
            ("mul_self_sub", Box::new(|t, x| {
                let y = t.mul(x, x)?;
                let z = t.sub(y, x)?;
                t.sum(z)
            })),
        ];
        for (name, build) in cases {
            for trial in 0..50 {
                let x = if trial == 0 { x.clone() } else { Tensor::rand_uniform([4, 8], -1.0, 1.0, &mut r) };
                let mut tape = Tape::new();
                let xv = tape.param(x.clone());
                let l = build(&mut tape, xv).unwrap();
                let analytic = tape.backward(l).unwrap().get(xv);
                let numeric = finite_diff_grad(
                    |t| {
                        let mut tape = Tape::new();
                        let v = tape.constant(t.clone());
                        let l = build(&mut tape, v).unwrap();
                        tape.value(l).item()
                    },
                    &x,
                    1e-5,
                );
                let err = max_relative_error(&analytic, &numeric);
                assert!(err < tol, "{name}: relative error {err}");
            }
        }
    }

    #[test]
    fn scalar_broadcast_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = tape.param(Tensor::scalar(2.0));
        let y = tape.mul(x, s).unwrap();
        let y = tape.add(y, s).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(s).item(), 6.0 + 3.0);
    }
}
