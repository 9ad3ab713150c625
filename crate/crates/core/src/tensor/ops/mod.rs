//! Differentiable operations on [`Tensor`](super::Tensor).
//!
//! Each op computes its forward value eagerly, reports its flop cost, and
//! records a backward closure when any input requires a gradient.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resample;
mod shape;
mod softmax;

pub use conv::{col2im, im2col, ConvSpec};
pub use norm::NormStats;
