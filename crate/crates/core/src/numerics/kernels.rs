//! Row-wise kernels shared by the graph ops and the standalone helpers.

use crate::scalar::Scalar;

/// Softmax over each row of a `rows x cols` matrix. With `causal`, entry
/// `(i, j)` is excluded (probability exactly zero) whenever `j > i`.
pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize, causal: bool, out: &mut [T]) {
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        let live = if causal { (r + 1).min(cols) } else { cols };
        let max = row[..live].iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut total = T::zero();
        for j in 0..live {
            let e = (row[j] - max).exp();
            dst[j] = e;
            total += e;
        }
        for v in &mut dst[..live] {
            *v /= total;
        }
        for v in &mut dst[live..] {
            *v = T::zero();
        }
    }
}

pub fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], rows: usize, cols: usize, dx: &mut [T]) {
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &dy[r * cols..(r + 1) * cols];
        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &g)| a + p * g);
        for j in 0..cols {
            dx[r * cols + j] += yr[j] * (gr[j] - dot);
        }
    }
}

/// Per-row statistics kept from the layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Mask-weighted layer normalisation of every row.
///
/// Mean and variance use `mask` as weights, and the output is multiplied by
/// `mask` again, so dimensions with zero weight neither influence the other
/// dimensions nor produce output.
#[allow(clippy::too_many_arguments)]
pub fn masked_layernorm_rows<T: Scalar>(
    x: &[T],
    rows: usize,
    cols: usize,
    gain: &[T],
    bias: &[T],
    mask: &[T],
    eps: T,
    out: &mut [T],
) -> NormStats<T> {
    let wsum = mask.iter().fold(T::zero(), |a, &b| a + b);
    let mut xhat = vec![T::zero(); rows * cols];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().zip(mask).fold(T::zero(), |a, (&v, &w)| a + w * v) / wsum;
        let var = row
            .iter()
            .zip(mask)
            .fold(T::zero(), |a, (&v, &w)| a + w * (v - mean) * (v - mean))
            / wsum;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..cols {
            let h = (row[j] - mean) * is;
            xhat[r * cols + j] = h;
            out[r * cols + j] = mask[j] * (gain[j] * h + bias[j]);
        }
    }
    NormStats { xhat, inv_std }
}

/// Gradients of [`masked_layernorm_rows`]; accumulates into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn masked_layernorm_rows_backward<T: Scalar>(
    stats: &NormStats<T>,
    dy: &[T],
    rows: usize,
    cols: usize,
    gain: &[T],
    mask: &[T],
    dx: Option<&mut [T]>,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let wsum = mask.iter().fold(T::zero(), |a, &b| a + b);
    if let Some(dg) = dgain {
        for r in 0..rows {
            for j in 0..cols {
                dg[j] += dy[r * cols + j] * mask[j] * stats.xhat[r * cols + j];
            }
        }
    }
    if let Some(db) = dbias {
        for r in 0..rows {
            for j in 0..cols {
                db[j] += dy[r * cols + j] * mask[j];
            }
        }
    }
    if let Some(dx) = dx {
        let mut u = vec![T::zero(); cols];
        for r in 0..rows {
            let xh = &stats.xhat[r * cols..(r + 1) * cols];
            let mut su = T::zero();
            let mut sux = T::zero();
            for j in 0..cols {
                u[j] = dy[r * cols + j] * mask[j] * gain[j];
                su += u[j];
                sux += u[j] * xh[j];
            }
            let is = stats.inv_std[r];
            for j in 0..cols {
                let wj = mask[j] / wsum;
                dx[r * cols + j] += is * (u[j] - wj * su - wj * xh[j] * sux);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}
