//! Image quality metrics on [0, 1]-scaled `[c, h, w]` arrays.

use crate::tensor::NdArray;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check(op: &'static str, a: &NdArray<f64>, b: &NdArray<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.numel() == 0 {
        return Err(Error::InvalidArgument(format!("{op} of an empty image")));
    }
    Ok(())
}

/// Mean absolute difference × 100.
pub fn mean_l1_percent(a: &NdArray<f64>, b: &NdArray<f64>) -> Result<f64> {
    check("mean_l1_percent", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(100.0 * s / a.numel() as f64)
}

pub fn mse(a: &NdArray<f64>, b: &NdArray<f64>) -> Result<f64> {
    check("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(s / a.numel() as f64)
}

/// `10 log10(peak² / MSE)`; `+inf` for identical images.
pub fn psnr(a: &NdArray<f64>, b: &NdArray<f64>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of an `h × w` plane.
fn filter(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// all valid window positions and channels. Images smaller than the window
/// use the largest odd window that fits.
pub fn ssim(a: &NdArray<f64>, b: &NdArray<f64>, peak: f64) -> Result<f64> {
    check("ssim", a, b)?;
    let [c, h, w] = a.shape()[..] else {
        return Err(Error::shape("ssim", format!("expected [c, h, w], got {:?}", a.shape())));
    };
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian(size, SSIM_SIGMA);
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..(ch + 1) * h * w];
        let pb = &b.data()[ch * h * w..(ch + 1) * h * w];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter(pa, h, w, &k);
        let mu_b = filter(pb, h, w, &k);
        let aa = filter(&prod(|x, _| x * x), h, w, &k);
        let bb = filter(&prod(|_, y| y * y), h, w, &k);
        let ab = filter(&prod(|x, y| x * y), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}
