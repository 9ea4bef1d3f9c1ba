//! Dense tensors, a small reverse-mode autodiff graph, and the masked
//! layer-norm primitive that growth relies on.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Axis, Bindings, ForwardPass, Gradients, Graph, NodeId, Nonlinearity, Op, PairRotation};
pub use tensor::Tensor;

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch { node: usize, op: &'static str, detail: String },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("input `{0}` is not bound")]
    Unbound(String),
    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("non-finite value: {context}")]
    NonFinite { context: String },
    #[error("{0}")]
    InvalidArgument(String),
}

pub const DEFAULT_LAYERNORM_EPS: f64 = 1e-5;
pub const DEFAULT_FD_EPS: f64 = 1e-3;

/// Central-difference gradient estimate of a scalar function.
pub fn finite_difference_gradient<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<Tensor<T>, NumericsError>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<T, NumericsError>,
{
    if eps <= T::zero() {
        return Err(NumericsError::InvalidArgument("finite-difference eps must be positive".into()));
    }
    let two = T::one() + T::one();
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(NumericsError::NonFinite { context: format!("f at coordinate {i}") });
        }
        out.push((hi - lo) / (two * eps));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Layer normalisation of one vector under per-dimension mask weights.
///
/// `mu = sum(m x) / sum(m)`, `var = sum(m (x - mu)^2) / sum(m)`, and
/// `out_i = m_i * (gain_i * (x_i - mu) / sqrt(var + eps) + bias_i)`.
pub fn masked_layernorm<T: Scalar>(x: &[T], mask: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>, NumericsError> {
    let n = x.len();
    if mask.len() != n || gain.len() != n || bias.len() != n {
        return Err(NumericsError::BadShape(format!(
            "masked layernorm lengths x={n} mask={} gain={} bias={}",
            mask.len(),
            gain.len(),
            bias.len()
        )));
    }
    if eps <= T::zero() {
        return Err(NumericsError::InvalidArgument("layernorm eps must be positive".into()));
    }
    if mask.iter().any(|&m| m < T::zero() || m > T::one()) {
        return Err(NumericsError::InvalidArgument("mask weights must lie in [0, 1]".into()));
    }
    if mask.iter().fold(T::zero(), |a, &m| a + m) <= T::zero() {
        return Err(NumericsError::InvalidArgument("mask sums to zero".into()));
    }
    let mut out = vec![T::zero(); n];
    kernels::masked_layernorm_rows(x, 1, n, gain, bias, mask, eps, &mut out);
    Ok(out)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)` over whole vectors.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, floor: f64) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    diff / a.sq_norm().sqrt().max(b.sq_norm().sqrt()).max(floor)
}

/// Worst relative error between autodiff and central differences over every
/// parameter leaf of `graph`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub worst_param: String,
    pub worst_relative_error: f64,
}

pub fn gradient_check<T: Scalar>(
    graph: &Graph<T>,
    bindings: &std::collections::BTreeMap<String, Tensor<T>>,
    eps: T,
) -> Result<GradCheck, NumericsError> {
    let (_, grads) = graph.evaluate_with_gradients(bindings)?;
    let mut report = GradCheck { worst_param: String::new(), worst_relative_error: 0.0 };
    for (name, analytic) in &grads.by_name {
        let base = bindings.get(name).ok_or_else(|| NumericsError::Unbound(name.clone()))?;
        let local = std::cell::RefCell::new(bindings.clone());
        let numeric = finite_difference_gradient(
            |x| {
                local.borrow_mut().insert(name.clone(), x.clone());
                Ok(graph.evaluate(&*local.borrow())?.data()[0])
            },
            base,
            eps,
        )?;
        let err = relative_error(analytic, &numeric, 1e-6);
        if err >= report.worst_relative_error {
            report = GradCheck { worst_param: name.clone(), worst_relative_error: err };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod fixtures;
#[cfg(test)]
mod tests;
