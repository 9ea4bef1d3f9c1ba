//! Masked structural growth: gated width/depth surgery on checkpoints,
//! mask annealing and preservation checks.

mod mask;
mod surgery;

pub use mask::{anneal_masks, AxisKind, GrowthMaskState, MaskEntry, MaskVectors};
pub use surgery::{
    grow_checkpoint, grow_depth, grow_depth_with, grow_width, spread_insertions, verify_function_preservation, DepthMode,
    PreservationReport,
};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum GrowthError {
    #[error("cannot shrink {axis} from {from} to {to}")]
    Shrink { axis: &'static str, from: usize, to: usize },
    #[error("changing head_dim ({from} -> {to}) is unsupported")]
    HeadDimChange { from: usize, to: usize },
    #[error("incompatible growth target: {0}")]
    Incompatible(String),
    #[error("insertion index {index} out of range for {layers} layers")]
    LayerIndex { index: usize, layers: usize },
    #[error("vocabularies differ ({before} vs {after}); logits are not comparable")]
    VocabMismatch { before: usize, after: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}
