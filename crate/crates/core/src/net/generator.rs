use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_binary;
use crate::lga::{GlobalKind, Lga, LgaConfig};
use crate::nn::{join, Conv2d, InstanceNorm2d, Mode, Module, StateKind};
use crate::region::{RaConfig, RegionMask};
use crate::tensor::{ConvSpec, Element, Tensor};
use crate::{Error, Result};

/// Where the two local-global attention layers sit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LgaPlacement {
    None,
    /// After the first two encoder layers.
    Encoder,
    /// Before the last two decoder layers.
    Decoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub image_size: usize,
    pub lga_placement: LgaPlacement,
    pub attention: GlobalKind,
    pub n_regions: usize,
    pub r: usize,
    pub dilated_blocks: usize,
    pub se_reduction: usize,
    pub sk_reduction: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 32,
            image_size: 64,
            lga_placement: LgaPlacement::Encoder,
            attention: GlobalKind::Region,
            n_regions: 16,
            r: 4,
            dilated_blocks: 4,
            se_reduction: 4,
            sk_reduction: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn ra(&self) -> RaConfig {
        RaConfig { n: self.n_regions, r: self.r, ..RaConfig::default() }
    }

    /// `(channels, spatial size)` of the features each LGA layer sees.
    pub fn lga_sites(&self) -> Vec<(usize, usize)> {
        let (b, s) = (self.base_channels, self.image_size);
        match self.lga_placement {
            LgaPlacement::None => vec![],
            LgaPlacement::Encoder => vec![(b, s), (2 * b, s / 2)],
            LgaPlacement::Decoder => vec![(2 * b, s / 2), (b, s)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.base_channels == 0 || self.image_size == 0 || self.n_regions == 0 || self.r == 0 {
            return bad("generator sizes must be positive".into());
        }
        if self.image_size % 4 != 0 {
            return bad(format!("image size {} is not divisible by 4", self.image_size));
        }
        for (c, s) in self.lga_sites() {
            if s % self.r != 0 {
                return bad(format!(
                    "attention layer at {s}x{s} is not divisible by the reduction scale r={}",
                    self.r
                ));
            }
            if self.attention == GlobalKind::Region && s / self.r == 0 {
                return bad(format!("attention layer at {s}x{s} is smaller than r={}", self.r));
            }
            LgaConfig { se_reduction: self.se_reduction, sk_reduction: self.sk_reduction, ..LgaConfig::new(c, self.ra()) }
                .validate()?;
        }
        Ok(())
    }
}

/// Standard deviation of the generator's convolution weights.
pub const INIT_STD: f64 = 0.02;

pub struct ResBlock<T: Element> {
    pub c1: Conv2d<T>,
    pub n1: InstanceNorm2d<T>,
    pub c2: Conv2d<T>,
    pub n2: InstanceNorm2d<T>,
}

impl<T: Element> ResBlock<T> {
    fn new(ch: usize, rng: &mut impl Rng) -> Self {
        let spec = ConvSpec::new(ch, ch, 3).padding(2).dilation(2);
        ResBlock {
            c1: Conv2d::with_std(spec, false, INIT_STD, rng),
            n1: InstanceNorm2d::new(ch),
            c2: Conv2d::with_std(spec, false, INIT_STD, rng),
            n2: InstanceNorm2d::new(ch),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.n1.forward(&self.c1.forward(x)?)?.relu();
        x.add(&self.n2.forward(&self.c2.forward(&h)?)?)
    }
}

impl<T: Element> Module<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.c1.visit(&join(prefix, "c1"), f);
        self.n1.visit(&join(prefix, "n1"), f);
        self.c2.visit(&join(prefix, "c2"), f);
        self.n2.visit(&join(prefix, "n2"), f);
    }
}

/// Conv followed by instance norm and relu.
pub struct ConvBlock<T: Element> {
    pub conv: Conv2d<T>,
    pub norm: InstanceNorm2d<T>,
}

impl<T: Element> ConvBlock<T> {
    fn new(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        ConvBlock { conv: Conv2d::with_std(spec, false, INIT_STD, rng), norm: InstanceNorm2d::new(spec.out_channels) }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu())
    }
}

impl<T: Element> Module<T> for ConvBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

pub struct Generator<T: Element> {
    pub config: GeneratorConfig,
    pub encoder: [ConvBlock<T>; 3],
    pub blocks: Vec<ResBlock<T>>,
    /// Upsample ×2 then conv, twice.
    pub decoder: [ConvBlock<T>; 2],
    pub to_rgb: Conv2d<T>,
    pub lga: Vec<Lga<T>>,
}

pub struct GeneratorOutput<T: Element> {
    /// Prediction in [−1, 1], same shape as the input image.
    pub image: Tensor<T>,
    pub region_masks: Vec<RegionMask<T>>,
}

impl<T: Element> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let encoder = [
            ConvBlock::new(ConvSpec::new(4, b, 7).padding(3), rng),
            ConvBlock::new(ConvSpec::new(b, 2 * b, 4).stride(2).padding(1), rng),
            ConvBlock::new(ConvSpec::new(2 * b, 4 * b, 4).stride(2).padding(1), rng),
        ];
        let blocks = (0..config.dilated_blocks).map(|_| ResBlock::new(4 * b, rng)).collect();
        let decoder = [
            ConvBlock::new(ConvSpec::new(4 * b, 2 * b, 3).padding(1), rng),
            ConvBlock::new(ConvSpec::new(2 * b, b, 3).padding(1), rng),
        ];
        let to_rgb = Conv2d::new(ConvSpec::new(b, 3, 3).padding(1), true, rng);
        let mut lga = Vec::new();
        for (c, s) in config.lga_sites() {
            let cfg = LgaConfig {
                se_reduction: config.se_reduction,
                sk_reduction: config.sk_reduction,
                global: config.attention,
                ..LgaConfig::new(c, config.ra())
            };
            lga.push(Lga::new(cfg, s, s, rng)?);
        }
        Ok(Generator { config, encoder, blocks, decoder, to_rgb, lga })
    }

    fn attend(
        &self,
        site: usize,
        x: Tensor<T>,
        mask: &Tensor<T>,
        mode: Mode,
        masks: &mut Vec<RegionMask<T>>,
    ) -> Result<Tensor<T>> {
        let (y, rm) = self.lga[site].forward(&x, Some(&mask.value()), mode)?;
        masks.extend(rm);
        Ok(y)
    }

    /// `i_in` is `[b, 3, H, W]` in [−1, 1]; `mask` is `[b, 1, H, W]`, 1 = known.
    /// Hole pixels of `i_in` are zeroed before use.
    pub fn forward(&self, i_in: &Tensor<T>, mask: &Tensor<T>, mode: Mode) -> Result<GeneratorOutput<T>> {
        let s = self.config.image_size;
        let xs = i_in.shape();
        if xs.len() != 4 || xs[1] != 3 || xs[2] != s || xs[3] != s {
            return Err(Error::shape("generator", format!("expected [b, 3, {s}, {s}], got {xs:?}")));
        }
        if mask.shape() != [xs[0], 1, s, s] {
            return Err(Error::shape("generator", format!("mask {:?} for image {xs:?}", mask.shape())));
        }
        check_binary(&mask.value())?;
        let place = self.config.lga_placement;
        let mut masks = Vec::new();
        let x = Tensor::concat(&[&i_in.mul(mask)?, mask], 1)?;
        let mut x = self.encoder[0].forward(&x)?;
        if place == LgaPlacement::Encoder {
            x = self.attend(0, x, mask, mode, &mut masks)?;
        }
        x = self.encoder[1].forward(&x)?;
        if place == LgaPlacement::Encoder {
            x = self.attend(1, x, mask, mode, &mut masks)?;
        }
        x = self.encoder[2].forward(&x)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        x = self.decoder[0].forward(&x.upsample_bilinear(2)?)?;
        if place == LgaPlacement::Decoder {
            x = self.attend(0, x, mask, mode, &mut masks)?;
        }
        x = self.decoder[1].forward(&x.upsample_bilinear(2)?)?;
        if place == LgaPlacement::Decoder {
            x = self.attend(1, x, mask, mode, &mut masks)?;
        }
        let image = self.to_rgb.forward(&x)?.tanh();
        Ok(GeneratorOutput { image, region_masks: masks })
    }

    /// Named parameter groups, used to check that every branch trains.
    pub fn groups(&self) -> Vec<(String, Vec<Tensor<T>>)> {
        let mut groups = Vec::new();
        for (i, e) in self.encoder.iter().enumerate() {
            groups.push((format!("encoder.{i}"), e.parameters()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            groups.push((format!("blocks.{i}"), b.parameters()));
        }
        for (i, d) in self.decoder.iter().enumerate() {
            groups.push((format!("decoder.{i}"), d.parameters()));
        }
        groups.push(("to_rgb".into(), self.to_rgb.parameters()));
        for (i, l) in self.lga.iter().enumerate() {
            groups.push((format!("lga.{i}"), l.parameters()));
        }
        groups
    }
}

impl<T: Element> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        for (i, e) in self.encoder.iter().enumerate() {
            e.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, d) in self.decoder.iter().enumerate() {
            d.visit(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.to_rgb.visit(&join(prefix, "to_rgb"), f);
        for (i, l) in self.lga.iter().enumerate() {
            l.visit(&join(prefix, &format!("lga.{i}")), f);
        }
    }
}
