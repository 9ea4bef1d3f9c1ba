use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::model::{ModelConfig, ParamGroup, Parameterization, Parameters};
use crate::numerics::Gradients;
use crate::scalar::Scalar;

/// AdamW hyperparameters shared by every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub lr_final: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.1, grad_clip_norm: 1.0, lr_final: 6e-6 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: String| Err(TrainerError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm));
        }
        if !(self.lr_final > 0.0) || !(self.eps > 0.0) {
            return bad("lr_final and eps must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate per parameter group.
pub type GroupLr = BTreeMap<ParamGroup, f64>;

/// Applies the width rule to a base learning rate: under µP hidden
/// matrices get `lr * w0 / d`, every other group `lr`.
pub fn group_lrs(config: &ModelConfig, lr: f64) -> GroupLr {
    let hidden = match config.parameterization {
        Parameterization::Mup => lr * config.mup_base_width as f64 / config.hidden_dim as f64,
        Parameterization::Standard => lr,
    };
    ParamGroup::ALL.iter().map(|&g| (g, if g == ParamGroup::Hidden { hidden } else { lr })).collect()
}

/// Linear warmup over `warmup_samples`, then cosine decay to `lr_final` at
/// `total_samples`. Past the end the rate stays at `lr_final`.
pub fn cosine_lr(
    samples_seen: u64,
    warmup_samples: u64,
    total_samples: u64,
    lr_start: f64,
    lr_final: f64,
) -> Result<f64, TrainerError> {
    if lr_final > lr_start {
        return Err(TrainerError::InvalidConfig(format!("lr_final {lr_final} exceeds lr_start {lr_start}")));
    }
    if samples_seen < warmup_samples {
        return Ok(lr_start * samples_seen as f64 / warmup_samples as f64);
    }
    let span = total_samples.saturating_sub(warmup_samples);
    if span == 0 {
        return Ok(lr_start);
    }
    let progress = ((samples_seen - warmup_samples) as f64 / span as f64).min(1.0);
    Ok(lr_final + (lr_start - lr_final) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// Adam first and second moments, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Parameters<T>,
    pub v: Parameters<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        Moments { m: params.zeros_like(), v: params.zeros_like() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_scale: f64,
}

/// One AdamW update with global-norm clipping. `step` is 1-based.
pub fn adamw_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    moments: &mut Moments<T>,
    step: u64,
    opt: &OptimizerConfig,
    lrs: &GroupLr,
) -> Result<StepStats, TrainerError> {
    if step == 0 {
        return Err(TrainerError::InvalidConfig("optimizer step counter starts at 1".into()));
    }
    let mut sq = 0.0f64;
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| TrainerError::ShapeMismatch(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(TrainerError::ShapeMismatch(format!("gradient for `{name}` has shape {:?}", g.shape())));
        }
        for &x in g.data() {
            let x = x.to_f64_lossy();
            if !x.is_finite() {
                return Err(TrainerError::NonFiniteGradient(name.to_string()));
            }
            sq += x * x;
        }
    }
    let grad_norm = sq.sqrt();
    let clip_scale = if grad_norm > opt.grad_clip_norm { opt.grad_clip_norm / grad_norm } else { 1.0 };

    let (b1, b2) = (opt.beta1, opt.beta2);
    let bc1 = 1.0 - b1.powi(step as i32);
    let bc2 = 1.0 - b2.powi(step as i32);
    let c = T::from_f64_lossy;
    let (b1t, b2t, one_b1, one_b2, scale) = (c(b1), c(b2), c(1.0 - b1), c(1.0 - b2), c(clip_scale));
    let (bc1t, bc2t, eps) = (c(bc1), c(bc2), c(opt.eps));
    for (name, p) in params.iter_mut() {
        let group = ParamGroup::of(name);
        let lr = *lrs.get(&group).ok_or_else(|| TrainerError::InvalidConfig(format!("no lr for group {}", group.as_str())))?;
        let decay = if group.decays() { c(1.0 - lr * opt.weight_decay) } else { T::one() };
        let lr = c(lr);
        let g = grads.get(name).expect("checked above").data();
        let m = moments.m.get_mut(name).ok_or_else(|| TrainerError::ShapeMismatch(format!("no moment for `{name}`")))?;
        let m = m.data_mut();
        let v = moments.v.get_mut(name).ok_or_else(|| TrainerError::ShapeMismatch(format!("no moment for `{name}`")))?;
        let v = v.data_mut();
        if m.len() != g.len() || v.len() != g.len() {
            return Err(TrainerError::ShapeMismatch(format!("moments for `{name}` have the wrong size")));
        }
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i] * scale;
            m[i] = b1t * m[i] + one_b1 * gi;
            v[i] = b2t * v[i] + one_b2 * gi * gi;
            let mhat = m[i] / bc1t;
            let vhat = v[i] / bc2t;
            *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(StepStats { grad_norm, clip_scale })
}
