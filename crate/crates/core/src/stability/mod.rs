//! Proxy hyperparameter search, µP transfer, coordinate checks and
//! width-wise loss prediction.

mod coord;
mod scaling;
mod search;

pub use coord::{coordinate_check, CoordRecord, CoordReport};
pub use scaling::{fit_loss_scaling, predict_loss, ScalingFit};
pub use search::{
    hp_grid_search, mup_transfer, probe_run, smoothed_final_loss, GridResult, HpGrid, HpTriple, ProbeSettings, SearchOutcome,
    SMOOTHING,
};

use crate::trainer::TrainerError;

#[derive(Debug, thiserror::Error)]
pub enum StabilityError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("base widths differ: proxy {proxy}, target {target}")]
    BaseWidthMismatch { proxy: usize, target: usize },
    #[error("need at least 3 distinct widths, got {0}")]
    TooFewWidths(usize),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
}
