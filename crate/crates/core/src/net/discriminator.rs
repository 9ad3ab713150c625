use rand::Rng;

use crate::nn::{join, Mode, Module, SpectralConv2d, StateKind};
use crate::tensor::{ConvSpec, Element, Tensor};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DISC_MIN_SIZE: usize = 64;

/// Patch discriminator: six spectrally normalized 5×5 stride-2 convolutions
/// with leaky relu, then a spectrally normalized 1×1 conv to one score per
/// patch.
pub struct Discriminator<T: Element> {
    pub layers: Vec<SpectralConv2d<T>>,
    pub head: SpectralConv2d<T>,
}

impl<T: Element> Discriminator<T> {
    /// Channel widths are `[1, 2, 4, 4, 4, 4] × base`.
    pub fn new(base: usize, rng: &mut impl Rng) -> Result<Self> {
        let widths = [1, 2, 4, 4, 4, 4].map(|m| m * base);
        let mut layers = Vec::with_capacity(6);
        let mut c_in = 3;
        for &c_out in &widths {
            layers.push(SpectralConv2d::new(ConvSpec::new(c_in, c_out, 5).stride(2).padding(2), true, rng)?);
            c_in = c_out;
        }
        let head = SpectralConv2d::new(ConvSpec::new(c_in, 1, 1), true, rng)?;
        Ok(Discriminator { layers, head })
    }

    /// Scores `[b, 1, h', w']` for images `[b, 3, H, W]`, `H, W ≥ 64`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("discriminator", format!("expected [b, 3, H, W], got {s:?}")));
        }
        if s[2] < DISC_MIN_SIZE || s[3] < DISC_MIN_SIZE {
            return Err(Error::InvalidArgument(format!(
                "discriminator needs at least {DISC_MIN_SIZE}x{DISC_MIN_SIZE} inputs, got {}x{}",
                s[2], s[3]
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, mode)?.leaky_relu(LEAKY_SLOPE);
        }
        self.head.forward(&h, mode)
    }

    pub fn spectral_layers(&self) -> impl Iterator<Item = &SpectralConv2d<T>> {
        self.layers.iter().chain(std::iter::once(&self.head))
    }

    /// Brings every σ̂ up to date with the current kernels.
    pub fn refresh_spectral_norms(&self) -> Result<()> {
        self.spectral_layers().try_for_each(|l| l.refresh())
    }
}

impl<T: Element> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layers.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}
