use std::path::{Path, PathBuf};

use regionpaint_core::data::{load_image, load_image_native, load_mask, load_mask_native, resize, save_image};
use regionpaint_core::net::{check_binary, Generator};
use regionpaint_core::nn::Mode;
use regionpaint_core::region::export_region_mask;
use regionpaint_core::{NdArray, Tensor};

use crate::train::load_generator;
use crate::{CliError, Result};

fn batch1(a: &NdArray<f32>) -> Tensor<f32> {
    let mut shape = vec![1];
    shape.extend_from_slice(a.shape());
    Tensor::constant(a.clone().reshape(&shape).expect("same element count"))
}

/// Fills the holes of a `[3, H, W]` image at its own resolution. The network
/// runs at its configured size; its prediction is resized back and only
/// hole pixels are taken from it.
pub fn inpaint(g: &Generator<f32>, image: &NdArray<f32>, mask: &NdArray<f32>) -> Result<NdArray<f32>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if mask.shape() != [1, h, w] {
        return Err(CliError::Other(format!("mask {:?} does not match image {:?}", mask.shape(), image.shape())));
    }
    check_binary(mask)?;
    let s = g.config.image_size;
    let small = resize(image, s, s, false)?;
    let small_mask = resize(mask, s, s, true)?;
    let pred = g.forward(&batch1(&small), &batch1(&small_mask), Mode::Eval)?.image.to_array();
    let pred = resize(&pred.reshape(&[3, s, s])?, h, w, false)?;
    let plane = h * w;
    Ok(NdArray::from_fn(image.shape(), |i| {
        let m = mask.data()[i % plane];
        m * image.data()[i] + (1.0 - m) * pred.data()[i]
    }))
}

/// Loads a checkpoint, image and mask, and writes the composited result.
pub fn infer(ckpt: &Path, image: &Path, mask: &Path, out: &Path, mask_invert: bool) -> Result<()> {
    let g = load_generator(ckpt)?;
    let img = load_image_native(image)?;
    let m = load_mask_native(mask, mask_invert)?;
    let result = inpaint(&g, &img, &m)?;
    save_image(out, &result)?;
    Ok(())
}

/// Writes the region masks of the attention layer `site` for one image:
/// per-region maps of the probabilities and of the coarse stage, plus a
/// color-coded argmax map.
pub fn viz_rm(ckpt: &Path, image: &Path, mask: &Path, out_dir: &Path, site: usize, mask_invert: bool) -> Result<Vec<PathBuf>> {
    let g = load_generator(ckpt)?;
    let s = g.config.image_size;
    let img = load_image(image, s)?;
    let m = load_mask(mask, s, mask_invert)?;
    let out = g.forward(&batch1(&img), &batch1(&m), Mode::Eval)?;
    let rm = out.region_masks.get(site).ok_or_else(|| {
        CliError::Config(format!(
            "checkpoint has {} region-attention layers; site {site} does not exist",
            out.region_masks.len()
        ))
    })?;
    Ok(export_region_mask(rm, 0, out_dir)?)
}
