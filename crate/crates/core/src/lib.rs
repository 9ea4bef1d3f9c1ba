//! Desk-scale laboratory for progressive (growth-based) training of small
//! decoder-only language models.

pub mod costmodel;
pub mod evalgen;
pub mod growth;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod stability;
pub mod tokenizer;
pub mod trainer;

pub use numerics::{Graph, Tensor as GenericTensor};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
