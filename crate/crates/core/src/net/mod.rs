//! Single-stage inpainting generator and spectrally normalized patch
//! discriminator.

mod discriminator;
mod generator;

pub use discriminator::{Discriminator, DISC_MIN_SIZE, LEAKY_SLOPE};
pub use generator::{Generator, GeneratorConfig, GeneratorOutput, LgaPlacement};

use crate::tensor::{Element, NdArray, Tensor};
use crate::{Error, Result};

/// Mask value marking a known pixel; holes are 0.
pub const KNOWN: f32 = 1.0;

/// `M ⊙ I_in + (1 − M) ⊙ I_pred`.
pub fn composite<T: Element>(i_in: &Tensor<T>, i_pred: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let hole = mask.neg().add_scalar(1.0);
    i_in.mul(mask)?.add(&i_pred.mul(&hole)?)
}

/// Errors unless every entry is exactly 0 or 1.
pub fn check_binary<T: Element>(mask: &NdArray<T>) -> Result<()> {
    if mask.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("mask must be binary (1 = known, 0 = hole)".into()))
    }
}
