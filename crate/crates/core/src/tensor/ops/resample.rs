use crate::tensor::{flops, lit, Element, NdArray, Tensor};
use crate::{Error, Result};

/// Source taps for one output coordinate of align-corners-false bilinear
/// upsampling: `(lower index, upper index, weight of upper)`.
fn bilinear_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [b,c,h,w], got {shape:?}"))),
    }
}

impl<T: Element> Tensor<T> {
    /// Mean over non-overlapping `factor x factor` blocks.
    pub fn avg_pool2d(&self, factor: usize) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4("avg_down", &self.shape())?;
        if factor == 0 {
            return Err(Error::InvalidArgument("pooling factor must be positive".into()));
        }
        for (axis, size) in [("height", h), ("width", w)] {
            if size % factor != 0 {
                return Err(Error::NotDivisible {
                    op: "avg_down",
                    axis,
                    size,
                    factor,
                });
            }
        }
        let (oh, ow) = (h / factor, w / factor);
        let scale = lit::<T>(1.0 / (factor * factor) as f64);
        let mut out = NdArray::zeros(&[b, c, oh, ow]);
        {
            let v = self.value();
            let x = v.data();
            let od = out.data_mut();
            for p in 0..b * c {
                for y in 0..h {
                    let src = &x[(p * h + y) * w..(p * h + y + 1) * w];
                    let dst = &mut od[(p * oh + y / factor) * ow..(p * oh + y / factor + 1) * ow];
                    for (xx, &val) in src.iter().enumerate() {
                        dst[xx / factor] += val;
                    }
                }
            }
            for o in od.iter_mut() {
                *o *= scale;
            }
        }
        flops::record((b * c * (h * w + oh * ow)) as u64);
        Ok(Tensor::from_op("avg_down", out, &[self], move |args| {
            let g = args.grad.data();
            let mut gx = NdArray::zeros(&[b, c, h, w]);
            let gd = gx.data_mut();
            for p in 0..b * c {
                for y in 0..h {
                    for xx in 0..w {
                        gd[(p * h + y) * w + xx] = g[(p * oh + y / factor) * ow + xx / factor] * scale;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers
    /// (align-corners false), clamping at the borders.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4("bilinear_up", &self.shape())?;
        if factor == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument("upsampling needs a positive factor and non-empty input".into()));
        }
        let (oh, ow) = (h * factor, w * factor);
        let ty = bilinear_taps(oh, h, factor);
        let tx = bilinear_taps(ow, w, factor);
        let mut out = NdArray::zeros(&[b, c, oh, ow]);
        {
            let v = self.value();
            let x = v.data();
            let od = out.data_mut();
            for p in 0..b * c {
                let plane = &x[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = lit::<T>(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = lit::<T>(fx);
                        let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                        let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                        od[(p * oh + oy) * ow + ox] = top * (T::one() - fy) + bot * fy;
                    }
                }
            }
        }
        flops::record(flops::BILINEAR_PER_OUTPUT * (b * c * oh * ow) as u64);
        Ok(Tensor::from_op("bilinear_up", out, &[self], move |args| {
            let g = args.grad.data();
            let mut gx = NdArray::zeros(&[b, c, h, w]);
            let gd = gx.data_mut();
            for p in 0..b * c {
                let plane = &mut gd[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = lit::<T>(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = lit::<T>(fx);
                        let go = g[(p * oh + oy) * ow + ox];
                        let (top, bot) = (go * (T::one() - fy), go * fy);
                        plane[y0 * w + x0] += top * (T::one() - fx);
                        plane[y0 * w + x1] += top * fx;
                        plane[y1 * w + x0] += bot * (T::one() - fx);
                        plane[y1 * w + x1] += bot * fx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
