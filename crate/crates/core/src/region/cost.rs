use super::RaConfig;
use crate::nn::Mode;
use crate::tensor::flops::{
    BILINEAR_PER_OUTPUT, NORM_FROZEN_PER_ELEMENT, NORM_STATS_PER_ELEMENT, SOFTMAX_PER_ELEMENT,
};
use crate::tensor::ConvSpec;
use crate::Result;

/// Floating-point operations of one region-attention forward pass on a
/// `[b, c, h, w]` input, counted the same way the instrumented ops count them.
pub fn ra_flops(cfg: &RaConfig, b: usize, c: usize, h: usize, w: usize, mode: Mode) -> Result<u64> {
    cfg.check_size(h, w)?;
    let n = cfg.n as u64;
    let (bu, cu, hw) = (b as u64, c as u64, (h * w) as u64);
    let d = ((h / cfg.r) * (w / cfg.r)) as u64;
    let pk = cfg.proj_kernel;
    let rk = cfg.refine_kernel;
    let proj = ConvSpec::new(c, cfg.n, pk).padding(pk / 2).flops(b, h, w, true)?;
    let pool = bu * n * (hw + d);
    let linear = 2 * bu * n * d * d + bu * n * d;
    let up = BILINEAR_PER_OUTPUT * bu * n * hw;
    let refine = ConvSpec::new(cfg.n, cfg.n, rk).padding(rk / 2).flops(b, h, w, false)?;
    let norm = match mode {
        Mode::Train => NORM_STATS_PER_ELEMENT,
        Mode::Eval => NORM_FROZEN_PER_ELEMENT,
    } * bu
        * n
        * hw;
    let softmax = SOFTMAX_PER_ELEMENT * bu * n * hw;
    let reconstruct = 2 * bu * cu * n * hw;
    let residual = bu * cu * hw;
    Ok(proj + pool + linear + up + refine + norm + softmax + reconstruct + residual)
}

/// Floating-point operations of [`super::cam_forward`] with `valid` known
/// context pixels per image (summed over the batch).
pub fn cam_flops(c: usize, h: usize, w: usize, patch: usize, valid_per_image: &[usize]) -> u64 {
    let n = (h * w) as u64;
    let l = (c * patch * patch) as u64;
    valid_per_image
        .iter()
        .map(|&nv| {
            let nv = nv as u64;
            3 * n * l + 2 * n * nv * l + n * nv + SOFTMAX_PER_ELEMENT * n * nv + 2 * n * nv * c as u64
        })
        .sum()
}
