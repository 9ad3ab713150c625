use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionpaint_core::nn::Mode;
use regionpaint_core::region::{cam_flops, cam_forward, ra_flops, RaConfig, RegionAttention, CAM_SCALE};
use regionpaint_core::tensor::flops;
use regionpaint_core::{NdArray, Tensor};
use serde::Serialize;

use crate::{CliError, Result};

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    pub n: usize,
    pub patch: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { n: 16, patch: 3, channels: 16, seed: 0 }
    }
}

/// Costs of one feature-map size. `*_model` come from the analytic cost
/// functions, `*_counted` from the instrumented forward pass.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub side: usize,
    pub pixels: usize,
    pub ra_flops_model: u64,
    pub ra_flops_counted: u64,
    pub cam_flops_model: u64,
    pub cam_flops_counted: u64,
    pub ra_ms: f64,
    pub cam_ms: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slopes of log flops against log pixel count.
    pub ra_slope: f64,
    pub cam_slope: f64,
    pub ra_time_slope: f64,
    pub cam_time_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Runs region attention and contextual attention on one `[1, c, s, s]`
/// feature map per side length, counting and timing each forward pass.
pub fn run(sides: &[usize], opts: &BenchOptions) -> Result<BenchReport> {
    if sides.len() < 2 {
        return Err(CliError::Config("bench needs at least two sizes".into()));
    }
    let cfg = RaConfig::with_n(opts.n);
    let c = opts.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::with_capacity(sides.len());
    for &s in sides {
        cfg.check_size(s, s).map_err(|e| CliError::Config(e.to_string()))?;
        let ra = RegionAttention::<f32>::new(cfg.clone(), c, s, s, &mut rng)?;
        let x = Tensor::constant(NdArray::<f32>::randn(&[1, c, s, s], 1.0, &mut rng));
        let valid = NdArray::<f32>::ones(&[1, 1, s, s]);

        let t = Instant::now();
        let (y, ra_counted) = flops::count(|| ra.forward(&x, Mode::Eval));
        y?;
        let ra_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let (y, cam_counted) = flops::count(|| cam_forward(&x, &valid, opts.patch, CAM_SCALE));
        y?;
        let cam_ms = t.elapsed().as_secs_f64() * 1e3;

        rows.push(BenchRow {
            side: s,
            pixels: s * s,
            ra_flops_model: ra_flops(&cfg, 1, c, s, s, Mode::Eval)?,
            ra_flops_counted: ra_counted,
            cam_flops_model: cam_flops(c, s, s, opts.patch, &[s * s]),
            cam_flops_counted: cam_counted,
            ra_ms,
            cam_ms,
        });
    }
    let px: Vec<f64> = rows.iter().map(|r| r.pixels as f64).collect();
    let col = |f: fn(&BenchRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(BenchReport {
        ra_slope: loglog_slope(&px, &col(|r| r.ra_flops_model as f64)),
        cam_slope: loglog_slope(&px, &col(|r| r.cam_flops_model as f64)),
        ra_time_slope: loglog_slope(&px, &col(|r| r.ra_ms)),
        cam_time_slope: loglog_slope(&px, &col(|r| r.cam_ms)),
        rows,
    })
}

pub fn write_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn counted_flops_match_the_model_on_small_maps() {
        let report = run(&[8, 16], &BenchOptions { n: 4, channels: 4, ..Default::default() }).unwrap();
        for r in &report.rows {
            assert_eq!(r.ra_flops_model, r.ra_flops_counted);
            assert_eq!(r.cam_flops_model, r.cam_flops_counted);
        }
    }
}
