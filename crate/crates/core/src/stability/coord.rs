use serde::{Deserialize, Serialize};

use super::{ProbeSettings, StabilityError};
use crate::model::ModelConfig;
use crate::trainer::{group_lrs, train_step, Checkpoint, Mixer};

/// Activation scale of one model at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordRecord {
    pub step: u64,
    /// RMS of the residual stream after each block.
    pub block_rms: Vec<f64>,
    pub logit_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordReport {
    pub widths: Vec<usize>,
    /// `records[w][s]` for width index `w` and step `s`.
    pub records: Vec<Vec<CoordRecord>>,
    /// Widths whose activations went non-finite.
    pub diverged: Vec<usize>,
    /// Largest widest/narrowest RMS ratio (either direction).
    pub max_ratio: f64,
    pub pass: bool,
}

impl CoordReport {
    pub const MAX_RATIO: f64 = 4.0;

    pub fn to_csv(&self) -> String {
        let mut s = String::from("width,step,quantity,rms\n");
        for (w, recs) in self.widths.iter().zip(&self.records) {
            for r in recs {
                for (i, v) in r.block_rms.iter().enumerate() {
                    s.push_str(&format!("{w},{},block{i},{v}\n", r.step));
                }
                s.push_str(&format!("{w},{},logits,{}\n", r.step, r.logit_rms));
            }
        }
        s
    }
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Records block-output and logit RMS at steps `0..=steps` for each width
/// on identical batches, training at the config's per-group rates for `lr`.
pub fn coordinate_check(
    widths: &[ModelConfig],
    lr: f64,
    data: &Mixer,
    settings: &ProbeSettings,
) -> Result<CoordReport, StabilityError> {
    let Some(first) = widths.first() else {
        return Err(StabilityError::InvalidArgument("no widths given".into()));
    };
    for c in widths {
        c.validate().map_err(|e| StabilityError::InvalidArgument(e.to_string()))?;
        if c.with_width(first.hidden_dim) != *first {
            return Err(StabilityError::InvalidArgument("configs must differ only in width".into()));
        }
    }
    let mut records = Vec::new();
    let mut diverged = Vec::new();
    for config in widths {
        let mut ckpt = Checkpoint::init(config, settings.seed)?;
        let mut rng = ckpt.rng.restore()?;
        let lrs = group_lrs(config, lr);
        let mut recs = Vec::new();
        for step in 0..=settings.steps {
            let batch = data.batch(&mut rng, settings.batch_size, config.context_len)?;
            let mut rec = CoordRecord { step, block_rms: Vec::new(), logit_rms: 0.0 };
            let mut observe = |bg: &crate::model::BatchGraph<f32>, pass: &crate::numerics::ForwardPass<'_, f32>| {
                rec.block_rms = bg.block_outputs.iter().map(|&id| rms(pass.value(id).data())).collect();
                rec.logit_rms = rms(pass.value(bg.logits).data());
            };
            let stepped = train_step(&mut ckpt, &batch, &settings.optimizer, &lrs, Some(&mut observe));
            let finite = rec.logit_rms.is_finite() && rec.block_rms.iter().all(|v| v.is_finite());
            recs.push(rec);
            if stepped.is_err() || !finite {
                diverged.push(config.hidden_dim);
                break;
            }
        }
        records.push(recs);
    }

    let (lo, hi) = extremes(widths);
    let mut max_ratio = 1.0f64;
    for (a, b) in records[lo].iter().zip(&records[hi]) {
        let pairs = a.block_rms.iter().zip(&b.block_rms).chain(std::iter::once((&a.logit_rms, &b.logit_rms)));
        for (&x, &y) in pairs {
            let r = (x / y).max(y / x);
            max_ratio = if r.is_nan() { f64::INFINITY } else { max_ratio.max(r) };
        }
    }
    if !diverged.is_empty() {
        max_ratio = f64::INFINITY;
    }
    Ok(CoordReport {
        widths: widths.iter().map(|c| c.hidden_dim).collect(),
        records,
        pass: diverged.is_empty() && max_ratio <= CoordReport::MAX_RATIO,
        diverged,
        max_ratio,
    })
}

fn extremes(widths: &[ModelConfig]) -> (usize, usize) {
    let key = |i: &usize| widths[*i].hidden_dim;
    let idx: Vec<usize> = (0..widths.len()).collect();
    (*idx.iter().min_by_key(|i| key(i)).expect("non-empty"), *idx.iter().max_by_key(|i| key(i)).expect("non-empty"))
}
