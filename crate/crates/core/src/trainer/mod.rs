//! AdamW training loop with ratio-mixed data, checkpoint files and
//! multi-stage growth orchestration.

mod checkpoint;
mod data;
mod optimizer;
mod run;
pub mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, FORMAT_VERSION};
pub use data::{
    mix_streams, read_token_file, write_token_file, Batch, DataSource, Manifest, ManifestEntry, MixSpec, MixedStream, Mixer,
    Sample, TokenStream,
};
pub use optimizer::{adamw_step, cosine_lr, group_lrs, GroupLr, Moments, OptimizerConfig, StepStats};
pub use run::{
    curve_csv, evaluate_loss, run_growth_plan, train_stage, train_step, GrowthPlan, LossPoint, PlanOutcome, StageConfig,
    StageOutcome, StageReport, TrainOptions,
};

use crate::growth::GrowthError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("training diverged at step {step}; last finite checkpoint kept")]
    Diverged { step: u64, checkpoint: Box<Checkpoint> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("stream `{0}` is empty")]
    EmptyStream(String),
    #[error("mix spec names unknown stream `{0}`")]
    UnknownStream(String),
    #[error("unsupported checkpoint format version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("growth into stage {stage} is not function preserving: max |dlogit| {max_abs_diff:e} > {tol:e}")]
    PreservationFailed { stage: usize, max_abs_diff: f64, tol: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}
