//! Dense tensors with tape-based reverse-mode differentiation.

mod array;
mod autograd;
mod broadcast;
mod element;
pub mod flops;
pub(crate) mod linalg;
pub mod ops;

pub use array::NdArray;
pub use autograd::{grad_enabled, no_grad, BackwardArgs, Tensor};
pub use element::{lit, Element};
pub use ops::{col2im, im2col, ConvSpec, NormStats};
