use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{adamw_step, cosine_lr, group_lrs, save_checkpoint, Batch, Checkpoint, GroupLr, Mixer, OptimizerConfig, TrainerError};
use crate::growth::{grow_checkpoint, verify_function_preservation, GrowthMaskState, PreservationReport};
use crate::model::{build_graph, BatchGraph, LossTargets, ModelConfig};
use crate::numerics::ForwardPass;

/// One row of a growth schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub model: ModelConfig,
    pub token_budget: u64,
    pub lr_start: f64,
    #[serde(default)]
    pub warmup_samples: u64,
    pub batch_tokens: u64,
    /// Mask annealing length after growing into this stage; defaults to 1%
    /// of the stage budget.
    #[serde(default)]
    pub anneal_tokens: Option<u64>,
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        self.model.validate()?;
        if self.batch_tokens == 0 || self.batch_tokens % self.model.context_len as u64 != 0 {
            return Err(TrainerError::InvalidConfig(format!(
                "batch_tokens {} must be a positive multiple of context_len {}",
                self.batch_tokens, self.model.context_len
            )));
        }
        if !(self.lr_start > 0.0) {
            return Err(TrainerError::InvalidConfig(format!("lr_start must be positive, got {}", self.lr_start)));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        (self.batch_tokens / self.model.context_len as u64) as usize
    }

    pub fn effective_anneal_tokens(&self) -> u64 {
        self.anneal_tokens.unwrap_or(self.token_budget / 100).max(1)
    }

    pub fn steps(&self) -> u64 {
        self.token_budget.div_ceil(self.batch_tokens)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    /// Seeds initialisation and data when training starts from scratch.
    pub seed: u64,
    pub log_every: u64,
    /// Stop after this many steps even if the budget is not used up.
    pub max_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { seed: 0, log_every: 10, max_steps: None, checkpoint_every: None, checkpoint_dir: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    /// Total tokens consumed when the loss was measured.
    pub tokens: u64,
    pub loss: f64,
    pub stage: usize,
}

pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<LossPoint>,
}

fn batch_graph(config: &ModelConfig, masks: &GrowthMaskState, batch: &Batch) -> Result<BatchGraph<f32>, TrainerError> {
    let targets = batch.targets();
    let weights = batch.weights();
    let inputs = batch.inputs();
    Ok(build_graph(config, Some(masks), &inputs, Some(LossTargets { targets: &targets, weights: &weights }))?)
}

/// Masked mean cross-entropy of `ckpt` on `batch`, no update.
pub fn evaluate_loss(ckpt: &Checkpoint, batch: &Batch) -> Result<f64, TrainerError> {
    let bg = batch_graph(&ckpt.config, &ckpt.masks, batch)?;
    Ok(bg.graph.evaluate(&ckpt.params)?.data()[0] as f64)
}

/// Forward, backward and AdamW on one batch; then advances the step, token
/// counters and growth masks. The state is untouched if the loss or any
/// gradient is non-finite.
///
/// `observe` sees the forward pass before the update.
pub fn train_step(
    ckpt: &mut Checkpoint,
    batch: &Batch,
    opt: &OptimizerConfig,
    lrs: &GroupLr,
    observe: Option<&mut dyn FnMut(&BatchGraph<f32>, &ForwardPass<'_, f32>)>,
) -> Result<f64, TrainerError> {
    let bg = batch_graph(&ckpt.config, &ckpt.masks, batch)?;
    let loss_node = bg.loss.expect("loss requested");
    let grads = {
        let pass = bg.graph.forward(&ckpt.params)?;
        if let Some(f) = observe {
            f(&bg, &pass);
        }
        let loss = pass.value(loss_node).data()[0] as f64;
        if !loss.is_finite() {
            return Err(TrainerError::NonFiniteLoss { step: ckpt.step + 1 });
        }
        (pass.backward(loss_node)?, loss)
    };
    let (grads, loss) = grads;
    adamw_step(&mut ckpt.params, &grads, &mut ckpt.moments, ckpt.step + 1, opt, lrs)?;
    let tokens = batch.tokens();
    ckpt.step += 1;
    ckpt.total_tokens += tokens;
    *ckpt.stage_tokens.last_mut().expect("stage cursor") += tokens;
    ckpt.masks.advance(tokens);
    Ok(loss)
}

/// Trains the active stage of `start` (or a fresh model) until its token
/// budget is consumed.
pub fn train_stage(
    stage: &StageConfig,
    start: Option<Checkpoint>,
    data: &Mixer,
    opt: &OptimizerConfig,
    options: &TrainOptions,
) -> Result<StageOutcome, TrainerError> {
    opt.validate()?;
    let mut ckpt = match start {
        Some(c) => {
            if c.config != stage.model {
                return Err(TrainerError::InvalidConfig("start checkpoint config differs from the stage model".into()));
            }
            c
        }
        None => Checkpoint::init(&stage.model, options.seed)?,
    };
    let mut curve = Vec::new();
    if stage.token_budget == 0 {
        return Ok(StageOutcome { checkpoint: ckpt, curve });
    }
    stage.validate()?;
    let len = stage.model.context_len;
    let batch_size = stage.batch_size();
    let total_samples = stage.token_budget / len as u64;
    let mut rng = ckpt.rng.restore()?;
    let mut taken = 0u64;
    while *ckpt.stage_tokens.last().expect("stage cursor") < stage.token_budget {
        if options.max_steps.is_some_and(|m| taken >= m) {
            break;
        }
        let seen = ckpt.stage_tokens.last().copied().unwrap_or(0) / len as u64;
        let lr = cosine_lr(seen, stage.warmup_samples, total_samples, stage.lr_start, opt.lr_final)?;
        let lrs = group_lrs(&ckpt.config, lr);
        let batch = data.batch(&mut rng, batch_size, len)?;
        assert_eq!(batch.tokens(), stage.batch_tokens, "batch size is fixed within a stage");
        let loss = match train_step(&mut ckpt, &batch, opt, &lrs, None) {
            Ok(l) => l,
            Err(TrainerError::NonFiniteLoss { step }) => {
                return Err(TrainerError::Diverged { step, checkpoint: Box::new(ckpt) });
            }
            Err(TrainerError::NonFiniteGradient(_)) => {
                let step = ckpt.step + 1;
                return Err(TrainerError::Diverged { step, checkpoint: Box::new(ckpt) });
            }
            Err(e) => return Err(e),
        };
        ckpt.rng = super::RngState::capture(&rng);
        taken += 1;
        if (ckpt.step - 1) % options.log_every.max(1) == 0 {
            curve.push(LossPoint { tokens: ckpt.total_tokens, loss, stage: ckpt.stage() });
        }
        if let (Some(every), Some(dir)) = (options.checkpoint_every, &options.checkpoint_dir) {
            if every > 0 && ckpt.step % every == 0 {
                save_checkpoint(&ckpt, &dir.join(format!("step-{:08}.ckpt", ckpt.step)))?;
            }
        }
    }
    if let Some(dir) = &options.checkpoint_dir {
        save_checkpoint(&ckpt, &dir.join(format!("stage-{}.ckpt", ckpt.stage())))?;
    }
    Ok(StageOutcome { checkpoint: ckpt, curve })
}

/// Ordered stages with monotone growth between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthPlan {
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_probes")]
    pub preservation_probes: usize,
    #[serde(default = "default_tol")]
    pub preservation_tol: f64,
}

fn default_probes() -> usize {
    16
}

fn default_tol() -> f64 {
    1e-5
}

impl GrowthPlan {
    pub fn new(stages: Vec<StageConfig>) -> Self {
        GrowthPlan { stages, preservation_probes: default_probes(), preservation_tol: default_tol() }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.stages.is_empty() {
            return Err(TrainerError::InvalidConfig("growth plan has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()?;
            if s.token_budget == 0 {
                return Err(TrainerError::InvalidConfig(format!("stage {i} has a zero token budget")));
            }
        }
        for (i, w) in self.stages.windows(2).enumerate() {
            let (a, b) = (&w[0].model, &w[1].model);
            let grows = b.hidden_dim >= a.hidden_dim
                && b.n_layers >= a.n_layers
                && b.ffn_dim >= a.ffn_dim
                && b.n_heads >= a.n_heads
                && b.head_dim == a.head_dim;
            if !grows {
                return Err(TrainerError::InvalidConfig(format!("stage {} does not dominate stage {i}", i + 1)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub config: ModelConfig,
    pub steps: u64,
    pub tokens: u64,
    pub final_loss: Option<f64>,
    pub preservation: Option<PreservationReport>,
    /// Held-out loss of the previous stage's final model and of the grown
    /// model before any training.
    pub heldout_before: Option<f64>,
    pub heldout_after: Option<f64>,
}

pub struct PlanOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<LossPoint>,
    /// Total tokens at each growth boundary.
    pub boundaries: Vec<u64>,
    pub reports: Vec<StageReport>,
}

/// Grow, verify, train for every stage. Aborts before training a grown
/// model whose preservation check fails.
pub fn run_growth_plan(
    plan: &GrowthPlan,
    data: &Mixer,
    opt: &OptimizerConfig,
    options: &TrainOptions,
    heldout: Option<&Batch>,
) -> Result<PlanOutcome, TrainerError> {
    plan.validate()?;
    let mut ckpt: Option<Checkpoint> = None;
    let mut curve = Vec::new();
    let mut boundaries = Vec::new();
    let mut reports = Vec::new();
    for (i, stage) in plan.stages.iter().enumerate() {
        let mut report = StageReport {
            stage: i,
            config: stage.model.clone(),
            steps: 0,
            tokens: 0,
            final_loss: None,
            preservation: None,
            heldout_before: None,
            heldout_after: None,
        };
        let start = match ckpt.take() {
            None => None,
            Some(before) => {
                let mut grown = grow_checkpoint(&before, &stage.model, stage.effective_anneal_tokens())?;
                let check = verify_function_preservation(
                    &before,
                    &grown,
                    plan.preservation_probes,
                    plan.preservation_tol,
                    before.derived_seed(0x7072_6f62),
                )?;
                if !check.pass {
                    return Err(TrainerError::PreservationFailed { stage: i, max_abs_diff: check.max_abs_diff, tol: check.tol });
                }
                if let Some(b) = heldout {
                    report.heldout_before = Some(evaluate_loss(&before, b)?);
                    report.heldout_after = Some(evaluate_loss(&grown, b)?);
                }
                report.preservation = Some(check);
                grown.begin_stage();
                boundaries.push(grown.total_tokens);
                Some(grown)
            }
        };
        let step0 = start.as_ref().map_or(0, |c| c.step);
        let out = train_stage(stage, start, data, opt, options)?;
        report.steps = out.checkpoint.step - step0;
        report.tokens = *out.checkpoint.stage_tokens.last().expect("stage cursor");
        report.final_loss = out.curve.last().map(|p| p.loss);
        curve.extend(out.curve);
        reports.push(report);
        ckpt = Some(out.checkpoint);
    }
    Ok(PlanOutcome { checkpoint: ckpt.expect("at least one stage"), curve, boundaries, reports })
}

/// `tokens,loss,stage` rows.
pub fn curve_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("tokens,loss,stage\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.tokens, p.loss, p.stage));
    }
    s
}
