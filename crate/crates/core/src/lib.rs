//! Region-aware attention for image inpainting.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense arrays, reverse-mode autodiff and layer kernels
//! * [`nn`]: parameterized layers, spectral normalization, optimizers, checkpoints
//! * [`region`]: the region mask generator, region dictionary, region-aware
//!   attention and the contextual-attention baseline
//! * [`lga`]: squeeze-excitation and selective-kernel fusion around the
//!   attention branch
//! * [`net`]: generator and patch discriminator
//! * [`losses`]: reconstruction, perceptual, style and adversarial objectives
//! * [`data`] and [`metrics`]: image and mask I/O, augmentation, quality metrics

mod error;

pub mod data;
pub mod gradcheck;
pub mod lga;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod region;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, ConvSpec, Element, NdArray, Tensor};

/// Value of a mask pixel that is known (not part of a hole).
pub use net::KNOWN;
