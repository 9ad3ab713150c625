use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, GenericImageView, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::tensor::NdArray;
use crate::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

fn center_square(img: &DynamicImage) -> DynamicImage {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    img.crop_imm((w - s) / 2, (h - s) / 2, s, s)
}

/// Center-crops to a square, resizes to `size × size` and maps 8-bit values
/// linearly onto [−1, 1]. Returns `[3, size, size]`.
pub fn load_image(path: &Path, size: usize) -> Result<NdArray<f32>> {
    let sq = center_square(&open(path)?);
    let rgb = if sq.width() as usize == size {
        sq.to_rgb8()
    } else {
        imageops::resize(&sq.to_rgb8(), size as u32, size as u32, FilterType::Triangle)
    };
    let plane = size * size;
    Ok(NdArray::from_fn(&[3, size, size], |i| {
        let (c, p) = (i / plane, i % plane);
        let px = rgb.get_pixel((p % size) as u32, (p / size) as u32);
        2.0 * px[c] as f32 / 255.0 - 1.0
    }))
}

/// Like [`load_image`] but keeps the file's own size and aspect ratio.
pub fn load_image_native(path: &Path) -> Result<NdArray<f32>> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(NdArray::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        2.0 * rgb.get_pixel((p % w) as u32, (p / w) as u32)[c] as f32 / 255.0 - 1.0
    }))
}

fn quantize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Writes a `[3, H, W]` image in [−1, 1] as 8-bit RGB.
pub fn save_image(path: &Path, img: &NdArray<f32>) -> Result<()> {
    let [3, h, w] = img.shape()[..] else {
        return Err(Error::shape("save_image", format!("expected [3, h, w], got {:?}", img.shape())));
    };
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|c| quantize(img.data()[c * h * w + p])))
    });
    out.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// Reads a mask as grayscale: values above 127 are known pixels (1), the
/// rest holes (0); `invert` swaps the two. Center-cropped and resized with
/// nearest-neighbour sampling to `[1, size, size]`.
pub fn load_mask(path: &Path, size: usize, invert: bool) -> Result<NdArray<f32>> {
    let gray = center_square(&open(path)?).to_luma8();
    let gray = if gray.width() as usize == size {
        gray
    } else {
        imageops::resize(&gray, size as u32, size as u32, FilterType::Nearest)
    };
    Ok(NdArray::from_fn(&[1, size, size], |p| {
        let known = gray.get_pixel((p % size) as u32, (p / size) as u32)[0] > 127;
        if known != invert { 1.0 } else { 0.0 }
    }))
}

/// Like [`load_mask`] but keeps the file's own size. Returns `[1, H, W]`.
pub fn load_mask_native(path: &Path, invert: bool) -> Result<NdArray<f32>> {
    let gray = open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(NdArray::from_fn(&[1, h, w], |p| {
        let known = gray.get_pixel((p % w) as u32, (p / w) as u32)[0] > 127;
        if known != invert { 1.0 } else { 0.0 }
    }))
}

/// Resizes every channel of a `[c, h, w]` array to `[c, height, width]`,
/// bilinearly or, with `nearest`, by nearest-neighbour sampling.
pub fn resize(img: &NdArray<f32>, height: usize, width: usize, nearest: bool) -> Result<NdArray<f32>> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::shape("resize", format!("expected [c, h, w], got {:?}", img.shape())));
    };
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let filter = if nearest { FilterType::Nearest } else { FilterType::Triangle };
    let mut out = Vec::with_capacity(c * height * width);
    for plane in img.data().chunks(h * w) {
        let buf = ImageBuffer::<Luma<f32>, _>::from_raw(w as u32, h as u32, plane.to_vec())
            .ok_or_else(|| Error::shape("resize", "plane size mismatch".to_string()))?;
        out.extend(imageops::resize(&buf, width as u32, height as u32, filter).into_raw());
    }
    NdArray::new(&[c, height, width], out)
}

/// Writes a `[1, H, W]` mask, known pixels white.
pub fn save_mask(path: &Path, mask: &NdArray<f32>) -> Result<()> {
    let [1, h, w] = mask.shape()[..] else {
        return Err(Error::shape("save_mask", format!("expected [1, h, w], got {:?}", mask.shape())));
    };
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask.data()[y as usize * w + x as usize] > 0.5 { 255 } else { 0 }])
    });
    out.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
}

/// Maps [−1, 1] to [0, 1].
pub fn to_unit_range(img: &NdArray<f32>) -> NdArray<f64> {
    NdArray::from_fn(img.shape(), |i| (img.data()[i] as f64 + 1.0) / 2.0)
}
