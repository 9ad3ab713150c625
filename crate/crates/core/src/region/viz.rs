use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use super::RegionMask;
use crate::tensor::{Element, NdArray};
use crate::{Error, Result};

/// `n` well-separated colours, identical on every call.
pub fn palette(n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|i| {
            let hue = (i as f64 * 0.618_033_988_75).fract() * 6.0;
            let value = if (i / 6) % 2 == 0 { 1.0 } else { 0.7 };
            let x = 1.0 - (hue % 2.0 - 1.0).abs();
            let (r, g, b) = match hue as u32 {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            [r, g, b].map(|c: f64| (c * value * 255.0).round() as u8)
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn plane<T: Element>(a: &NdArray<T>, batch: usize, ch: usize) -> (usize, usize, &[T]) {
    let s = a.shape();
    let (n, h, w) = (s[1], s[2], s[3]);
    let start = (batch * n + ch) * h * w;
    (h, w, &a.data()[start..start + h * w])
}

fn save_gray(path: &Path, h: usize, w: usize, vals: &[f64]) -> Result<()> {
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(vals[y as usize * w + x as usize])]));
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// Writes `rm_XX.png` (probabilities), `rmc_XX.png` (coarse predictions,
/// min-max scaled per map) for every region, and `rm_argmax.png`, for image
/// `batch` of the mask. Returns the written paths.
pub fn export_region_mask<T: Element>(rm: &RegionMask<T>, batch: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let values = rm.values.to_array();
    let coarse = rm.coarse.to_array();
    let n = values.shape()[1];
    if batch >= values.shape()[0] {
        return Err(Error::InvalidArgument(format!("batch index {batch} out of range")));
    }
    let mut written = Vec::with_capacity(2 * n + 1);
    for j in 0..n {
        let (h, w, p) = plane(&values, batch, j);
        let vals: Vec<f64> = p.iter().map(|v| v.to_f64()).collect();
        let path = out_dir.join(format!("rm_{j:02}.png"));
        save_gray(&path, h, w, &vals)?;
        written.push(path);

        let (h, w, p) = plane(&coarse, batch, j);
        let raw: Vec<f64> = p.iter().map(|v| v.to_f64()).collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let vals: Vec<f64> = raw.iter().map(|v| (v - lo) / span).collect();
        let path = out_dir.join(format!("rmc_{j:02}.png"));
        save_gray(&path, h, w, &vals)?;
        written.push(path);
    }
    let colors = palette(n);
    let (h, w) = (values.shape()[2], values.shape()[3]);
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let best = (0..n)
            .max_by(|&a, &b| {
                let va = plane(&values, batch, a).2[i].to_f64();
                let vb = plane(&values, batch, b).2[i].to_f64();
                va.total_cmp(&vb).then(b.cmp(&a))
            })
            .unwrap_or(0);
        Rgb(colors[best])
    });
    let path = out_dir.join("rm_argmax.png");
    img.save(&path).map_err(|e| Error::Image { path: path.clone(), source: e })?;
    written.push(path);
    Ok(written)
}
