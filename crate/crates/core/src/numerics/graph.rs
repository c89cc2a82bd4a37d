//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Leaves can
//! borrow parameter tensors so inference does not copy weights. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns
//! [`Grads`] for every node that requires a gradient.

use std::borrow::Cow;

use super::ops::{layer_norm_rows, softmax_rows, LAYER_NORM_EPS};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, log_sum_exp, norm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    PickPerRow {
        x: Var,
        idx: Vec<usize>,
    },
    Take {
        x: Var,
        flat: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    CrfLogZ {
        emissions: Var,
        trans: Var,
        unary: Vec<f64>,
        pairwise: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_slice(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf borrowing `t`; differentiable when `requires_grad`.
    pub fn leaf(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf owning `t`; never differentiable.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf that is differentiable.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul_nt lhs")?;
        let (n, k2) = self.value(b).require_matrix("matmul_nt rhs")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulNt(a, b), &[a, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let cols = tx.cols();
        if tb.len() != cols {
            return Err(shape_err("add_row", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(tb.data()) {
                *v += bv;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).scaled(c);
        self.push(t, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v + c);
        self.push(t, Op::AddScalar(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()));
        self.push(t, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push(t, Op::Relu(x), &[x])
    }

    /// Clips into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(t, Op::Clamp(x, lo, hi), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::exp);
        self.push(t, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::ln);
        self.push(t, Op::Log(x), &[x])
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let t = self.value(x).map(|v| v.powf(p));
        self.push(t, Op::Powf(x, p), &[x])
    }

    /// Softmax over the last axis; `causal` masks entries above the diagonal.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let t = softmax_rows(self.value(x), causal);
        self.push(t, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let cols = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::LogSoftmax(x), &[x])
    }

    /// Row-wise layer normalization followed by an affine `gain`, `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(shape_err("layer_norm", tx.shape(), self.value(gain).shape()));
        }
        let (xhat, inv_std) = layer_norm_rows(tx, LAYER_NORM_EPS);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut data = xhat.data().to_vec();
        for row in data.chunks_mut(cols) {
            for ((v, &gv), &bv) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gv + bv;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: xhat.into_data(),
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Scales each row to unit Euclidean norm; zero rows are degenerate.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        let mut norms = Vec::with_capacity(tx.rows());
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols) {
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Degenerate("zero-norm representation".into()));
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::NormalizeRows { x, norms }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.require_matrix("transpose")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = tx.data()[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data)?;
        Ok(self.push(t, Op::Transpose(x), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.require_matrix("slice_cols")?;
        if start + len > n {
            return Err(Error::invalid(format!(
                "slice_cols: {start}+{len} exceeds {n} columns"
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&tx.data()[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let m = self.value(xs[0]).rows();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.value(x).require_matrix("concat_cols")?;
            if r != m {
                return Err(shape_err("concat_cols", self.value(xs[0]).shape(), self.value(x).shape()));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        Ok(self.push(t, Op::ConcatCols(xs.to_vec()), xs))
    }

    /// Selects rows `ids` of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = tt.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid(format!("row {id} out of range for {v} rows")));
            }
            data.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(t, Op::GatherRows { table, ids: ids.to_vec() }, &[table]))
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn pick_per_row(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.require_matrix("pick_per_row")?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::invalid("pick_per_row: index out of range"));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| tx.data()[i * n + j]).collect();
        let t = Tensor::vector(data);
        Ok(self.push(t, Op::PickPerRow { x, idx: idx.to_vec() }, &[x]))
    }

    /// Flat-index selection into a vector.
    pub fn take(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if flat.iter().any(|&k| k >= tx.len()) {
            return Err(Error::invalid("take: index out of range"));
        }
        let t = Tensor::vector(flat.iter().map(|&k| tx.data()[k]).collect());
        Ok(self.push(t, Op::Take { x, flat: flat.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(t, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor::scalar(tx.data().iter().sum::<f64>() / tx.len() as f64);
        self.push(t, Op::Mean(x), &[x])
    }

    /// Log partition function of a linear-chain CRF with per-position
    /// `emissions` (T×V) and transition matrix `trans` (V×V), computed
    /// exactly by the forward algorithm. The backward pass uses the node
    /// and edge marginals from forward-backward.
    pub fn crf_log_partition(&mut self, emissions: Var, trans: Var) -> Result<Var> {
        let (t_len, v) = self.value(emissions).require_matrix("crf emissions")?;
        let (v1, v2) = self.value(trans).require_matrix("crf transitions")?;
        if v1 != v || v2 != v || t_len == 0 {
            return Err(shape_err(
                "crf_log_partition",
                self.value(emissions).shape(),
                self.value(trans).shape(),
            ));
        }
        let e = self.value(emissions).data();
        let m = self.value(trans).data();
        let (log_z, unary, pairwise) = crf_forward_backward(e, m, t_len, v);
        let t = Tensor::scalar(log_z);
        Ok(self.push(
            t,
            Op::CrfLogZ {
                emissions,
                trans,
                unary,
                pairwise,
            },
            &[emissions, trans],
        ))
    }

    /// Reverse pass from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let nn = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let ga = self.slot(grads, *a);
                    gemm_nt_acc(g, self.value(*b).data(), ga, m, nn, k);
                }
                if self.requires_grad(*b) {
                    let gb = self.slot(grads, *b);
                    gemm_tn_acc(self.value(*a).data(), g, gb, m, k, nn);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let nn = self.value(*b).shape()[0];
                if self.requires_grad(*a) {
                    let ga = self.slot(grads, *a);
                    gemm_acc(g, self.value(*b).data(), ga, m, nn, k);
                }
                if self.requires_grad(*b) {
                    let gb = self.slot(grads, *b);
                    gemm_tn_acc(g, self.value(*a).data(), gb, m, nn, k);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y));
                self.acc(grads, *b, g.iter().zip(va).map(|(g, x)| g * x));
            }
            Op::AddRow(x, b) => {
                self.acc(grads, *x, g.iter().copied());
                if self.requires_grad(*b) {
                    let cols = self.value(*b).len();
                    let gb = self.slot(grads, *b);
                    for row in g.chunks(cols) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Scale(x, c) => self.acc(grads, *x, g.iter().map(|v| v * c)),
            Op::AddScalar(x) => self.acc(grads, *x, g.iter().copied()),
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(g, &v)| {
                        let u = GELU_C * (v + GELU_K * v * v * v);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                    }),
                );
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                self.acc(
                    grads,
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 }),
                );
            }
            Op::Exp(x) => self.acc(grads, *x, g.iter().zip(y).map(|(g, y)| g * y)),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, g.iter().zip(xv).map(|(g, x)| g / x));
            }
            Op::Powf(x, p) => {
                let xv = self.value(*x).data();
                self.acc(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(g, &x)| {
                        if *p == 0.0 || *g == 0.0 {
                            0.0
                        } else {
                            g * p * x.powf(p - 1.0)
                        }
                    }),
                );
            }
            Op::Softmax(x) => {
                if self.requires_grad(*x) {
                    let cols = node.value.cols();
                    let gx = self.slot(grads, *x);
                    for ((gr, yr), out) in g.chunks(cols).zip(y.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o += yv * (gv - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if self.requires_grad(*x) {
                    let cols = node.value.cols();
                    let gx = self.slot(grads, *x);
                    for ((gr, yr), out) in g.chunks(cols).zip(y.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let s: f64 = gr.iter().sum();
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o += gv - yv.exp() * s;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let cols = node.value.cols();
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) {
                    let gg = self.slot(grads, *gain);
                    for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((acc, &a), &b) in gg.iter_mut().zip(gr).zip(xr) {
                            *acc += a * b;
                        }
                    }
                }
                if self.requires_grad(*bias) {
                    let gb = self.slot(grads, *bias);
                    for gr in g.chunks(cols) {
                        for (acc, &a) in gb.iter_mut().zip(gr) {
                            *acc += a;
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let gx = self.slot(grads, *x);
                    let n = cols as f64;
                    for (r, ((gr, xr), out)) in g
                        .chunks(cols)
                        .zip(xhat.chunks(cols))
                        .zip(gx.chunks_mut(cols))
                        .enumerate()
                    {
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, &d), &xh) in out.iter_mut().zip(&dxhat).zip(xr) {
                            *o += inv_std[r] * (d - mean_d - xh * mean_dx);
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                if self.requires_grad(*x) {
                    let cols = node.value.cols();
                    let gx = self.slot(grads, *x);
                    for (r, ((gr, yr), out)) in g
                        .chunks(cols)
                        .zip(y.chunks(cols))
                        .zip(gx.chunks_mut(cols))
                        .enumerate()
                    {
                        let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o += (gv - yv * s) / norms[r];
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if self.requires_grad(*x) {
                    let (m, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                    let gx = self.slot(grads, *x);
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if self.requires_grad(*x) {
                    let n = self.value(*x).cols();
                    let len = node.value.cols();
                    let gx = self.slot(grads, *x);
                    for (i, gr) in g.chunks(len).enumerate() {
                        for (o, &v) in gx[i * n + start..i * n + start + len].iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let n = node.value.cols();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    if self.requires_grad(x) {
                        let gx = self.slot(grads, x);
                        for (i, out) in gx.chunks_mut(w).enumerate() {
                            for (o, &v) in out.iter_mut().zip(&g[i * n + offset..i * n + offset + w]) {
                                *o += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                if self.requires_grad(*table) {
                    let d = self.value(*table).cols();
                    let gt = self.slot(grads, *table);
                    for (gr, &id) in g.chunks(d).zip(ids) {
                        for (o, &v) in gt[id * d..(id + 1) * d].iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                }
            }
            Op::PickPerRow { x, idx } => {
                if self.requires_grad(*x) {
                    let n = self.value(*x).cols();
                    let gx = self.slot(grads, *x);
                    for (i, (&j, &v)) in idx.iter().zip(g).enumerate() {
                        gx[i * n + j] += v;
                    }
                }
            }
            Op::Take { x, flat } => {
                if self.requires_grad(*x) {
                    let gx = self.slot(grads, *x);
                    for (&k, &v) in flat.iter().zip(g) {
                        gx[k] += v;
                    }
                }
            }
            Op::Sum(x) => self.acc(grads, *x, std::iter::repeat(g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, std::iter::repeat(g[0] / n));
            }
            Op::CrfLogZ {
                emissions,
                trans,
                unary,
                pairwise,
            } => {
                self.acc(grads, *emissions, unary.iter().map(|u| g[0] * u));
                self.acc(grads, *trans, pairwise.iter().map(|p| g[0] * p));
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, vals: impl Iterator<Item = f64>) {
        if !self.requires_grad(v) {
            return;
        }
        let slot = self.slot(grads, v);
        for (o, x) in slot.iter_mut().zip(vals) {
            *o += x;
        }
    }
}

/// Forward-backward over a dense chain. Returns `log Z`, node marginals
/// (T×V) and edge marginals summed over time (V×V).
pub(crate) fn crf_forward_backward(e: &[f64], m: &[f64], t_len: usize, v: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mut alpha = vec![0.0; t_len * v];
    alpha[..v].copy_from_slice(&e[..v]);
    let mut buf = vec![0.0; v];
    for t in 1..t_len {
        for y in 0..v {
            for (yp, b) in buf.iter_mut().enumerate() {
                *b = alpha[(t - 1) * v + yp] + m[yp * v + y];
            }
            alpha[t * v + y] = e[t * v + y] + log_sum_exp(&buf);
        }
    }
    let log_z = log_sum_exp(&alpha[(t_len - 1) * v..]);

    let mut beta = vec![0.0; t_len * v];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for yp in 0..v {
            for (y, b) in buf.iter_mut().enumerate() {
                *b = m[yp * v + y] + e[(t + 1) * v + y] + beta[(t + 1) * v + y];
            }
            beta[t * v + yp] = log_sum_exp(&buf);
        }
    }

    let unary: Vec<f64> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a + b - log_z).exp())
        .collect();
    let mut pairwise = vec![0.0; v * v];
    for t in 1..t_len {
        for yp in 0..v {
            let a = alpha[(t - 1) * v + yp];
            for y in 0..v {
                pairwise[yp * v + y] +=
                    (a + m[yp * v + y] + e[t * v + y] + beta[t * v + y] - log_z).exp();
            }
        }
    }
    (log_z, unary, pairwise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let w = Tensor::scalar(3.0);
        let mut g = Graph::new();
        let x = g.leaf(&w, true);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let w = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let x = g.leaf(&w, true);
        let c = g.constant(Tensor::scalar(4.0));
        let _unused = g.sum(x);
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let w = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let x = g.leaf(&w, true);
        assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn crf_marginals_sum_to_one() {
        let e = [0.1, -0.3, 0.7, 0.2, 0.0, -1.0, 0.5, 0.4, 0.3];
        let m = [0.2, -0.1, 0.0, 0.3, 0.1, -0.2, 0.0, 0.05, 0.4];
        let (_, unary, pairwise) = crf_forward_backward(&e, &m, 3, 3);
        for row in unary.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((pairwise.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}
