use std::fmt::Write as _;
use std::path::Path;

use regionpaint_core::data::{load_image, load_mask, read_manifest, to_unit_range, MaskRatioBin, MaskedSample};
use regionpaint_core::metrics::{mean_l1_percent, psnr, ssim};
use regionpaint_core::net::Generator;
use regionpaint_core::NdArray;
use serde::{Deserialize, Serialize};

use crate::infer::inpaint;
use crate::train::list_pngs;
use crate::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub bin: String,
    pub l1_pct: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinSummary {
    pub bin: MaskRatioBin,
    pub count: usize,
    /// Means over the bin's rows; `None` for an empty bin.
    pub l1_pct: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

/// Scores one sample on the composited image at [0, 1] scale.
pub fn score(sample_id: &str, s: &MaskedSample, pred: &NdArray<f32>) -> Result<EvalRow> {
    let plane = s.mask.numel();
    let comp = NdArray::from_fn(s.gt.shape(), |i| {
        let m = s.mask.data()[i % plane];
        m * s.corrupted.data()[i] + (1.0 - m) * pred.data()[i]
    });
    let (a, b) = (to_unit_range(&comp), to_unit_range(&s.gt));
    Ok(EvalRow {
        sample_id: sample_id.to_string(),
        bin: s.bin().label().to_string(),
        l1_pct: mean_l1_percent(&a, &b)?,
        psnr: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b, 1.0)?,
    })
}

/// Evaluates every manifest image against the masks of `mask_dir`, taken in
/// sorted order and cycled. With `model = None` the prediction is the ground
/// truth itself.
pub fn evaluate(
    model: Option<&Generator<f32>>,
    manifest: &Path,
    mask_dir: &Path,
    mask_invert: bool,
    size: usize,
) -> Result<Vec<EvalRow>> {
    let images = read_manifest(manifest)?;
    let masks = list_pngs(mask_dir)?;
    if masks.is_empty() {
        return Err(CliError::Config(format!("no PNG masks in {}", mask_dir.display())));
    }
    let mut rows = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let gt = load_image(path, size)?;
        let mask = load_mask(&masks[i % masks.len()], size, mask_invert)?;
        let sample = MaskedSample::new(gt, mask)?;
        let pred = match model {
            Some(g) => inpaint(g, &sample.corrupted, &sample.mask)?,
            None => sample.gt.clone(),
        };
        let id = path.file_stem().map_or_else(|| format!("{i}"), |s| s.to_string_lossy().into_owned());
        rows.push(score(&id, &sample, &pred)?);
    }
    Ok(rows)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-bin means in table order, empty bins included.
pub fn summarize(rows: &[EvalRow]) -> Vec<BinSummary> {
    MaskRatioBin::ALL
        .iter()
        .map(|&bin| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| r.bin == bin.label()).collect();
            let col = |f: fn(&EvalRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            BinSummary {
                bin,
                count: mine.len(),
                l1_pct: col(|r| r.l1_pct),
                psnr: col(|r| r.psnr),
                ssim: col(|r| r.ssim),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v}"))
}

pub fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_summary(path: &Path, summary: &[BinSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin", "count", "l1_pct", "psnr", "ssim"])?;
    for s in summary {
        w.write_record([
            s.bin.label().to_string(),
            s.count.to_string(),
            cell(s.l1_pct),
            cell(s.psnr),
            cell(s.ssim),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table of the summary for the terminal.
pub fn format_summary(summary: &[BinSummary]) -> String {
    let mut out = format!("{:<8} {:>5} {:>9} {:>9} {:>7}\n", "mask", "n", "L1(%)", "PSNR", "SSIM");
    let f = |v: Option<f64>, p: usize| v.map_or("NA".into(), |v| format!("{v:.p$}"));
    for s in summary {
        let _ = writeln!(
            out,
            "{:<8} {:>5} {:>9} {:>9} {:>7}",
            s.bin.label(),
            s.count,
            f(s.l1_pct, 2),
            f(s.psnr, 2),
            f(s.ssim, 4)
        );
    }
    out
}
