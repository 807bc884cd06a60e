//! Forward kernels and their analytic reverse-mode counterparts.
//!
//! Every `*_backward` takes the gradient of a scalar objective with respect to
//! the kernel output and returns gradients with respect to its inputs.

use super::Matrix;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const L2_NORM_EPS: f64 = 1e-12;
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.mm(b))
}

/// Returns `(dA, dB)` for `C = A·B`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, d_out: &Matrix) -> (Matrix, Matrix) {
    (d_out.mm_t(b), a.t_mm(d_out))
}

/// Softmax of a single slice in place, with max subtraction.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

/// `dx = y ⊙ (dy − ⟨y, dy⟩)` for one softmax slice.
pub fn softmax_slice_backward(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (gi - inner);
    }
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Backward of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        softmax_slice_backward(y.row(i), dy.row(i), dx.row_mut(i));
    }
    dx
}

/// Intermediate values kept by [`layer_norm_rows_fwd`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_rows(m: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Matrix {
    layer_norm_rows_fwd(m, gamma, beta, eps).0
}

pub fn layer_norm_rows_fwd(
    m: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Matrix, LayerNormCache) {
    let d = m.cols();
    assert_eq!(gamma.len(), d, "layer norm gamma width");
    assert_eq!(beta.len(), d, "layer norm beta width");
    let mut y = Matrix::zeros(m.rows(), d);
    let mut x_hat = Matrix::zeros(m.rows(), d);
    let mut inv_std = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = m.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let xh = x_hat.row_mut(i);
        for (h, &x) in xh.iter_mut().zip(row) {
            *h = (x - mean) * is;
        }
        let xh = x_hat.row(i).to_vec();
        for (j, o) in y.row_mut(i).iter_mut().enumerate() {
            *o = gamma[j] * xh[j] + beta[j];
        }
    }
    (y, LayerNormCache { x_hat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_rows_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &Matrix,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let inv_d = 1.0 / d as f64;
    let mut g = vec![0.0; d];
    for i in 0..n {
        let xh = cache.x_hat.row(i);
        let dyr = dy.row(i);
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            g[j] = dyr[j] * gamma[j];
        }
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        let is = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = is * (g[j] - inv_d * sum_g - xh[j] * inv_d * sum_gx);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn norm_of(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let denom = norm_of(v).max(eps);
    v.iter().map(|x| x / denom).collect()
}

/// Backward of [`l2_normalize`] with respect to its input `x`.
pub fn l2_normalize_backward(x: &[f64], dy: &[f64], eps: f64) -> Vec<f64> {
    let n = norm_of(x);
    if n <= eps {
        return dy.iter().map(|g| g / eps).collect();
    }
    let inner: f64 = x.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>() / n;
    x.iter()
        .zip(dy)
        .map(|(xi, gi)| (gi - xi / n * inner) / n)
        .collect()
}

pub fn l2_normalize_rows(m: &Matrix, eps: f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let r = l2_normalize(m.row(i), eps);
        out.row_mut(i).copy_from_slice(&r);
    }
    out
}

pub fn l2_normalize_rows_backward(x: &Matrix, dy: &Matrix, eps: f64) -> Matrix {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let r = l2_normalize_backward(x.row(i), dy.row(i), eps);
        dx.row_mut(i).copy_from_slice(&r);
    }
    dx
}

/// Numerically stable `log Σ exp(v)`.
pub fn logsumexp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}
