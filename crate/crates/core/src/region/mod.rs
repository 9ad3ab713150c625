//! Region-aware attention: a region mask generator predicts per-pixel
//! probabilities over `n` regions, and features are rebuilt as mixtures of the
//! rows of a learnable `n × c` dictionary.

mod cam;
mod cost;
mod viz;

pub use cam::{cam_forward, context_mask, CAM_PATCH, CAM_SCALE};
pub use cost::{cam_flops, ra_flops};
pub use viz::{export_region_mask, palette};

use rand::Rng;

use crate::nn::{join, BatchNorm2d, Conv2d, Linear, Mode, Module, StateKind};
use crate::tensor::{ConvSpec, Element, NdArray, Tensor};
use crate::{Error, Result};

pub const DICT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RaConfig {
    /// Number of regions.
    pub n: usize,
    /// Spatial reduction before the shared linear layer.
    pub r: usize,
    pub proj_kernel: usize,
    pub refine_kernel: usize,
}

impl Default for RaConfig {
    fn default() -> Self {
        RaConfig { n: 16, r: 4, proj_kernel: 5, refine_kernel: 3 }
    }
}

impl RaConfig {
    pub fn with_n(n: usize) -> Self {
        RaConfig { n, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.r == 0 {
            return Err(Error::InvalidArgument("region count n and reduction r must be positive".into()));
        }
        if self.proj_kernel % 2 == 0 || self.refine_kernel % 2 == 0 {
            return Err(Error::InvalidArgument("projection and refine kernels must be odd".into()));
        }
        Ok(())
    }

    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        if h % self.r != 0 || w % self.r != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map {h}x{w} is not divisible by the reduction scale r={}",
                self.r
            )));
        }
        Ok(())
    }
}

/// The three stages of a predicted region mask.
#[derive(Debug)]
pub struct RegionMask<T: Element> {
    /// Per-pixel probabilities over regions, `[b, n, h, w]`.
    pub values: Tensor<T>,
    /// Output of the shared linear layer, `[b, n, h/r, w/r]`.
    pub coarse: Tensor<T>,
    /// Refined logits before the softmax, `[b, n, h, w]`.
    pub refined_logits: Tensor<T>,
}

pub struct RegionDictionary<T: Element> {
    /// `[n, c]`; row `j` is the prototype feature of region `j`.
    pub d: Tensor<T>,
}

impl<T: Element> RegionDictionary<T> {
    pub fn new(n: usize, c: usize, rng: &mut impl Rng) -> Self {
        RegionDictionary { d: Tensor::parameter(NdArray::randn(&[n, c], DICT_INIT_STD, rng)) }
    }

    pub fn n(&self) -> usize {
        self.d.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.d.shape()[1]
    }
}

pub struct RegionMaskGenerator<T: Element> {
    pub r: usize,
    /// One `(h/r·w/r) → (h/r·w/r)` map applied to every region channel.
    pub shared_linear: Linear<T>,
    pub refine: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Element> RegionMaskGenerator<T> {
    pub fn new(cfg: &RaConfig, h: usize, w: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        cfg.check_size(h, w)?;
        let d = (h / cfg.r) * (w / cfg.r);
        let k = cfg.refine_kernel;
        Ok(RegionMaskGenerator {
            r: cfg.r,
            shared_linear: Linear::new(d, d, true, rng),
            refine: Conv2d::new(ConvSpec::new(cfg.n, cfg.n, k).padding(k / 2), false, rng),
            bn: BatchNorm2d::new(cfg.n),
        })
    }
}

impl<T: Element> Module<T> for RegionMaskGenerator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.shared_linear.visit(&join(prefix, "shared_linear"), f);
        self.refine.visit(&join(prefix, "refine"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }
}

/// Maps `c`-channel features to `n` region channels with the projection conv.
pub fn project_to_regions<T: Element>(x: &Tensor<T>, proj: &Conv2d<T>) -> Result<Tensor<T>> {
    x.conv2d(&proj.weight, proj.bias.as_ref(), &proj.spec)
}

/// avg_down → shared linear per channel → bilinear_up → refine conv + BN →
/// channel softmax.
pub fn generate_region_mask<T: Element>(
    xp: &Tensor<T>,
    rmg: &RegionMaskGenerator<T>,
    mode: Mode,
) -> Result<RegionMask<T>> {
    let shape = xp.shape();
    if shape.len() != 4 {
        return Err(Error::shape("generate_region_mask", format!("expected [b, n, h, w], got {shape:?}")));
    }
    let [b, n, h, w] = [shape[0], shape[1], shape[2], shape[3]];
    let r = rmg.r;
    if h % r != 0 || w % r != 0 {
        return Err(Error::InvalidArgument(format!(
            "feature map {h}x{w} is not divisible by the reduction scale r={r}"
        )));
    }
    let (hr, wr) = (h / r, w / r);
    if rmg.shared_linear.d_in() != hr * wr {
        return Err(Error::shape(
            "generate_region_mask",
            format!(
                "shared linear layer expects {} inputs, downsampled map has {hr}x{wr}",
                rmg.shared_linear.d_in()
            ),
        ));
    }
    let down = xp.avg_pool2d(r)?.reshape(&[b, n, hr * wr])?;
    let coarse = rmg.shared_linear.forward(&down)?.reshape(&[b, n, hr, wr])?;
    let up = coarse.upsample_bilinear(r)?;
    let refined_logits = rmg.bn.forward(&rmg.refine.forward(&up)?, mode)?;
    let values = refined_logits.softmax_over_channels()?;
    Ok(RegionMask { values, coarse, refined_logits })
}

/// `Y_i = Σ_j RM_ji · D_j` for every pixel `i`.
pub fn reconstruct_from_regions<T: Element>(rm: &Tensor<T>, dict: &RegionDictionary<T>) -> Result<Tensor<T>> {
    let shape = rm.shape();
    if shape.len() != 4 {
        return Err(Error::shape("reconstruct_from_regions", format!("expected [b, n, h, w], got {shape:?}")));
    }
    let [b, n, h, w] = [shape[0], shape[1], shape[2], shape[3]];
    if n != dict.n() {
        return Err(Error::shape(
            "reconstruct_from_regions",
            format!("region mask has {n} regions, dictionary has {}", dict.n()),
        ));
    }
    let c = dict.channels();
    let dt = dict.d.permute(&[1, 0])?;
    dt.matmul(&rm.reshape(&[b, n, h * w])?)?.reshape(&[b, c, h, w])
}

/// One region-aware attention block for a fixed input resolution.
pub struct RegionAttention<T: Element> {
    pub config: RaConfig,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub proj: Conv2d<T>,
    pub rmg: RegionMaskGenerator<T>,
    pub dict: RegionDictionary<T>,
}

impl<T: Element> RegionAttention<T> {
    pub fn new(config: RaConfig, channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        config.check_size(height, width)?;
        let k = config.proj_kernel;
        let proj = Conv2d::new(ConvSpec::new(channels, config.n, k).padding(k / 2), true, rng);
        let rmg = RegionMaskGenerator::new(&config, height, width, rng)?;
        let dict = RegionDictionary::new(config.n, channels, rng);
        Ok(RegionAttention { config, channels, height, width, proj, rmg, dict })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, RegionMask<T>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels || shape[2] != self.height || shape[3] != self.width {
            return Err(Error::shape(
                "region_attention",
                format!(
                    "built for [b, {}, {}, {}], got {shape:?}",
                    self.channels, self.height, self.width
                ),
            ));
        }
        let xp = project_to_regions(x, &self.proj)?;
        let rm = generate_region_mask(&xp, &self.rmg, mode)?;
        let y = reconstruct_from_regions(&rm.values, &self.dict)?;
        Ok((x.add(&y)?, rm))
    }
}

impl<T: Element> Module<T> for RegionAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.proj.visit(&join(prefix, "proj"), f);
        self.rmg.visit(&join(prefix, "rmg"), f);
        f(&join(prefix, "dict"), &self.dict.d, StateKind::Parameter);
    }
}

#[cfg(test)]
mod tests;
