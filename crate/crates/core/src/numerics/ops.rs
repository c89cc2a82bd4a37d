//! Value-level kernels shared by the autodiff graph and by plain inference code.

use serde::{Deserialize, Serialize};

use super::tensor::{dot, gemm_acc, norm, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Matmul,
    Add,
    Softmax,
    LayerNorm,
    Cosine,
}

/// Applies one forward kernel. `softmax` and `layer_norm` act on the last
/// axis of `a` and ignore `b`; `cosine` returns a scalar tensor.
pub fn forward_op(a: &Tensor, b: &Tensor, kind: OpKind) -> Result<Tensor> {
    match kind {
        OpKind::Matmul => matmul(a, b),
        OpKind::Add => add(a, b),
        OpKind::Softmax => Ok(softmax_rows(a, false)),
        OpKind::LayerNorm => Ok(layer_norm_rows(a, LAYER_NORM_EPS).0),
        OpKind::Cosine => {
            if a.shape() != b.shape() {
                return Err(Error::invalid(format!(
                    "cosine: shapes {:?} and {:?} differ",
                    a.shape(),
                    b.shape()
                )));
            }
            Ok(Tensor::scalar(cosine(a.data(), b.data())?))
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul lhs")?;
    let (k2, n) = b.require_matrix("matmul rhs")?;
    if k != k2 {
        return Err(Error::invalid(format!(
            "matmul: inner dimensions {k} and {k2} differ"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "add: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Softmax over the last axis with max subtraction. With `causal`, entry
/// `(i, j)` for `j > i` is excluded (probability 0).
pub fn softmax_rows(x: &Tensor, causal: bool) -> Tensor {
    let cols = x.cols();
    let mut out = vec![0.0; x.len()];
    for (i, (src, dst)) in x
        .data()
        .chunks(cols.max(1))
        .zip(out.chunks_mut(cols.max(1)))
        .enumerate()
    {
        let live = if causal { (i + 1).min(cols) } else { cols };
        softmax_into(&src[..live], &mut dst[..live]);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - m).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    softmax_into(xs, &mut out);
    out
}

/// Per-row normalization to zero mean and unit variance. Returns the
/// normalized values and the per-row inverse standard deviation.
pub fn layer_norm_rows(x: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let cols = x.cols();
    let mut out = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.rows());
    for (src, dst) in x.data().chunks(cols).zip(out.chunks_mut(cols)) {
        let mean = src.iter().sum::<f64>() / cols as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    (Tensor::new(x.shape().to_vec(), out).expect("same shape"), inv_std)
}

/// Cosine similarity; a zero-norm argument is a degenerate input.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "cosine: lengths {} and {} differ",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

pub fn argmax(xs: &[f64]) -> usize {
    // lowest index wins ties
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
