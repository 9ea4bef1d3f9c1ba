//! GPT-style decoder with xPos attention, µP width scaling and a masked
//! cross-entropy objective shared by language and teacher samples.

mod config;
mod forward;
mod loss;
mod params;
pub mod xpos;

pub use config::{ModelConfig, Parameterization};
pub use forward::{build_graph, forward, forward_batch, BatchGraph, LossTargets};
pub use loss::lm_loss;
pub use params::{init_parameters, init_std, param_shapes, LayerNames, ParamGroup, Parameters, FINAL_BIAS, FINAL_GAIN, READOUT, TOK_EMB};
pub use xpos::{xpos_apply, XposDecay};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    UnknownToken { id: u32, vocab: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequences in a batch must have equal length")]
    RaggedBatch,
    #[error("loss inputs disagree: {rows} rows, {targets} targets, {weights} weights")]
    LossShape { rows: usize, targets: usize, weights: usize },
    #[error("loss mask selects no positions")]
    EmptyLossMask,
    #[error("parameters do not match the model config")]
    ParameterShape,
    #[error("parameter `{0}` holds a non-finite value")]
    NonFinite(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[cfg(test)]
mod tests;
