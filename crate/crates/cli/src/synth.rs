use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use regionpaint_core::data::{generate_mask, save_image, save_mask, synthetic_image};

use crate::Result;

/// Hole ratios cycled through when drawing masks, one per table bin.
pub const MASK_RATIOS: [f64; 4] = [0.15, 0.25, 0.35, 0.45];

/// Writes `count` synthetic images, a manifest listing them and one mask per
/// image under `out_dir`. Returns the manifest and mask directory paths.
pub fn write_toy_dataset(out_dir: &Path, count: usize, size: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    let mut manifest = String::new();
    for i in 0..count {
        let name = format!("img_{i:04}.png");
        save_image(&images.join(&name), &synthetic_image(seed + i as u64, size))?;
        let _ = writeln!(manifest, "images/{name}");
        let ratio = MASK_RATIOS[i % MASK_RATIOS.len()];
        save_mask(&masks.join(format!("mask_{i:04}.png")), &generate_mask(seed + i as u64, size, ratio)?)?;
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)?;
    Ok((manifest_path, masks))
}
