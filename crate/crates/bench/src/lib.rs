//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionpaint_core::{NdArray, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A constant `[b, c, h, w]` feature map with unit-variance entries.
pub fn feature(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    Tensor::constant(NdArray::randn(&[b, c, h, w], 1.0, &mut rng(seed)))
}

/// A trainable tensor of the given shape.
pub fn parameter(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::parameter(NdArray::randn(shape, 0.1, &mut rng(seed)))
}
