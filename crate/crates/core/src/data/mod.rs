//! Image and mask ingestion, procedural masks, hole-ratio bins and
//! augmentation. Images are `[3, H, W]` in [−1, 1]; masks are `[1, H, W]`
//! with 1 marking a known pixel.

mod io;
mod masks;
mod synth;

pub use io::{
    load_image, load_image_native, load_mask, load_mask_native, resize, save_image, save_mask, to_unit_range,
};
pub use masks::{generate_mask, MAX_MASK_ATTEMPTS, RATIO_TOLERANCE};
pub use synth::synthetic_image;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::check_binary;
use crate::tensor::NdArray;
use crate::{Error, Result};

/// Hole-to-image area bins, half-open `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MaskRatioBin {
    R10To20,
    R20To30,
    R30To40,
    R40To50,
    Other,
}

impl MaskRatioBin {
    pub const ALL: [MaskRatioBin; 5] =
        [MaskRatioBin::R10To20, MaskRatioBin::R20To30, MaskRatioBin::R30To40, MaskRatioBin::R40To50, MaskRatioBin::Other];

    pub fn label(self) -> &'static str {
        match self {
            MaskRatioBin::R10To20 => "10-20%",
            MaskRatioBin::R20To30 => "20-30%",
            MaskRatioBin::R30To40 => "30-40%",
            MaskRatioBin::R40To50 => "40-50%",
            MaskRatioBin::Other => "other",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.label() == s)
    }

    /// Exact integer binning of `holes / total`.
    pub fn from_counts(holes: usize, total: usize) -> Self {
        let tenths = |k: usize| holes * 10 >= total * k;
        match (1..=5).rev().find(|&k| tenths(k)) {
            Some(1) => MaskRatioBin::R10To20,
            Some(2) => MaskRatioBin::R20To30,
            Some(3) => MaskRatioBin::R30To40,
            Some(4) => MaskRatioBin::R40To50,
            _ => MaskRatioBin::Other,
        }
    }
}

fn hole_count(mask: &NdArray<f32>) -> usize {
    mask.data().iter().filter(|&&v| v == 0.0).count()
}

pub fn hole_ratio(mask: &NdArray<f32>) -> f64 {
    hole_count(mask) as f64 / mask.numel().max(1) as f64
}

pub fn ratio_bin(mask: &NdArray<f32>) -> MaskRatioBin {
    MaskRatioBin::from_counts(hole_count(mask), mask.numel())
}

#[derive(Clone, Debug)]
pub struct MaskedSample {
    pub gt: NdArray<f32>,
    pub mask: NdArray<f32>,
    /// `gt ⊙ mask`.
    pub corrupted: NdArray<f32>,
    pub hole_ratio: f64,
}

impl MaskedSample {
    pub fn new(gt: NdArray<f32>, mask: NdArray<f32>) -> Result<Self> {
        let (gs, ms) = (gt.shape(), mask.shape());
        if gs.len() != 3 || gs[0] != 3 || ms != [1, gs[1], gs[2]] {
            return Err(Error::shape("masked_sample", format!("image {gs:?} with mask {ms:?}")));
        }
        check_binary(&mask)?;
        let plane = gs[1] * gs[2];
        let corrupted = NdArray::from_fn(gs, |i| gt.data()[i] * mask.data()[i % plane]);
        let hole_ratio = hole_ratio(&mask);
        Ok(MaskedSample { gt, mask, corrupted, hole_ratio })
    }

    pub fn bin(&self) -> MaskRatioBin {
        ratio_bin(&self.mask)
    }
}

fn flip_rows(a: &NdArray<f32>) -> NdArray<f32> {
    let w = a.shape()[a.ndim() - 1];
    NdArray::from_fn(a.shape(), |i| a.data()[i - i % w + (w - 1 - i % w)])
}

/// Mirrors image and mask left to right.
pub fn flip_horizontal(s: &MaskedSample) -> MaskedSample {
    let (gt, mask) = (flip_rows(&s.gt), flip_rows(&s.mask));
    MaskedSample { corrupted: flip_rows(&s.corrupted), gt, mask, hole_ratio: s.hole_ratio }
}

/// Horizontal flip with probability 1/2, drawn from `seed`.
pub fn augment(s: &MaskedSample, seed: u64) -> MaskedSample {
    if ChaCha8Rng::seed_from_u64(seed).random_bool(0.5) {
        flip_horizontal(s)
    } else {
        s.clone()
    }
}

/// Reads a newline-delimited list of image paths. Blank lines and lines
/// starting with `#` are skipped; relative paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

#[cfg(test)]
mod tests;
