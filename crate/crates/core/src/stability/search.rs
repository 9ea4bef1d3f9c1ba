use serde::{Deserialize, Serialize};

use super::StabilityError;
use crate::model::ModelConfig;
use crate::trainer::{group_lrs, train_stage, GroupLr, Mixer, OptimizerConfig, StageConfig, TrainOptions, TrainerError};

/// EMA factor for the search criterion.
pub const SMOOTHING: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpTriple {
    pub learning_rate: f64,
    pub init_std: f64,
    pub softmax_temperature: f64,
}

impl HpTriple {
    pub fn validate(&self) -> Result<(), StabilityError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !(ok(self.learning_rate) && ok(self.init_std) && ok(self.softmax_temperature)) {
            return Err(StabilityError::InvalidArgument(format!("hyperparameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `config` with this triple's σ and τ.
    pub fn apply(&self, config: &ModelConfig) -> ModelConfig {
        ModelConfig { init_std: self.init_std, softmax_temperature: self.softmax_temperature, ..config.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpGrid {
    pub learning_rates: Vec<f64>,
    pub init_stds: Vec<f64>,
    pub temperatures: Vec<f64>,
}

impl HpGrid {
    /// Cells in grid order: learning rate outermost, temperature innermost.
    pub fn triples(&self) -> Vec<HpTriple> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &init_std in &self.init_stds {
                for &softmax_temperature in &self.temperatures {
                    out.push(HpTriple { learning_rate, init_std, softmax_temperature });
                }
            }
        }
        out
    }
}

/// Shared shape of every probe run.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub triple: HpTriple,
    /// Smoothed final training loss; `inf` if the run diverged.
    pub loss: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub results: Vec<GridResult>,
    pub best: HpTriple,
    pub best_loss: f64,
}

impl SearchOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("learning_rate,init_std,softmax_temperature,loss,diverged\n");
        for r in &self.results {
            let t = r.triple;
            s.push_str(&format!("{},{},{},{},{}\n", t.learning_rate, t.init_std, t.softmax_temperature, r.loss, r.diverged));
        }
        s
    }
}

/// Exponential moving average of a loss curve, seeded with its first value.
pub fn smoothed_final_loss(losses: &[f64]) -> f64 {
    let mut it = losses.iter();
    let Some(&first) = it.next() else { return f64::INFINITY };
    let s = it.fold(first, |s, &l| SMOOTHING * s + (1.0 - SMOOTHING) * l);
    if s.is_nan() {
        f64::INFINITY
    } else {
        s
    }
}

/// Trains `config` for `settings.steps` steps under a cosine schedule from
/// `lr`. Returns the per-step losses, or `None` on divergence.
pub fn probe_run(config: &ModelConfig, lr: f64, data: &Mixer, settings: &ProbeSettings) -> Result<Option<Vec<f64>>, StabilityError> {
    let batch_tokens = (settings.batch_size * config.context_len) as u64;
    let stage = StageConfig {
        model: config.clone(),
        token_budget: settings.steps * batch_tokens,
        lr_start: lr,
        warmup_samples: 0,
        batch_tokens,
        anneal_tokens: None,
    };
    let options = TrainOptions { seed: settings.seed, log_every: 1, ..TrainOptions::default() };
    match train_stage(&stage, None, data, &settings.optimizer, &options) {
        Ok(out) => Ok(Some(out.curve.iter().map(|p| p.loss).collect())),
        Err(TrainerError::Diverged { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// One proxy run per grid cell on identical data, ranked by smoothed final
/// loss. `threads > 1` runs cells concurrently; results keep grid order.
pub fn hp_grid_search(
    proxy: &ModelConfig,
    grid: &HpGrid,
    data: &Mixer,
    settings: &ProbeSettings,
    threads: usize,
) -> Result<SearchOutcome, StabilityError> {
    let triples = grid.triples();
    if triples.is_empty() {
        return Err(StabilityError::InvalidArgument("empty grid".into()));
    }
    for t in &triples {
        t.validate()?;
    }
    let cell = |t: &HpTriple| -> Result<GridResult, StabilityError> {
        let losses = probe_run(&t.apply(proxy), t.learning_rate, data, settings)?;
        let loss = losses.as_deref().map_or(f64::INFINITY, smoothed_final_loss);
        Ok(GridResult { triple: *t, loss, diverged: !loss.is_finite() })
    };
    let results: Vec<GridResult> = if threads <= 1 {
        triples.iter().map(cell).collect::<Result<_, _>>()?
    } else {
        let chunk = triples.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> =
                triples.chunks(chunk).map(|c| s.spawn(move || c.iter().map(cell).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("grid worker panicked")).collect::<Result<Vec<_>, _>>()
        })?
    };
    let losses: Vec<f64> = results.iter().map(|r| r.loss).collect();
    let best = results[best_index(&losses)].clone();
    Ok(SearchOutcome { best: best.triple, best_loss: best.loss, results })
}

/// First index of the smallest loss.
pub(crate) fn best_index(losses: &[f64]) -> usize {
    (0..losses.len()).min_by(|&i, &j| losses[i].total_cmp(&losses[j]).then(i.cmp(&j))).expect("non-empty")
}

/// Per-group learning rates for `target` from a triple tuned on `proxy`.
/// σ and τ carry over unchanged through [`HpTriple::apply`].
pub fn mup_transfer(hp: &HpTriple, proxy: &ModelConfig, target: &ModelConfig) -> Result<GroupLr, StabilityError> {
    hp.validate()?;
    if proxy.mup_base_width != target.mup_base_width {
        return Err(StabilityError::BaseWidthMismatch { proxy: proxy.mup_base_width, target: target.mup_base_width });
    }
    Ok(group_lrs(target, hp.learning_rate))
}
