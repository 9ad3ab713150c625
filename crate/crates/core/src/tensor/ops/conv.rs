use rayon::prelude::*;

use crate::tensor::linalg::{gemm, MatRef};
use crate::tensor::{flops, Element, NdArray, Tensor};
use crate::{Error, Result};

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    /// Square `k x k` kernel, stride 1, no padding, no dilation.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    /// Length of one unrolled receptive field, `c_in * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    /// `floor((in + 2p - d(k-1) - 1) / s) + 1` per axis; errors if either axis
    /// would be empty.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |name: &str, n: usize, k: usize, s: usize, p: usize, d: usize| {
            let span = d * (k - 1) + 1;
            if k == 0 || s == 0 || d == 0 || n + 2 * p < span {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name} {n} with padding {p} is smaller than the dilated kernel extent {span}"),
                ));
            }
            Ok((n + 2 * p - span) / s + 1)
        };
        Ok((
            axis("height", h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            axis("width", w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }

    /// Forward cost for a batch of `b` inputs of size `h x w`.
    pub fn flops(&self, b: usize, h: usize, w: usize, bias: bool) -> Result<u64> {
        let (oh, ow) = self.output_size(h, w)?;
        let out = (b * self.out_channels * oh * ow) as u64;
        Ok(2 * out * self.patch_len() as u64 + if bias { out } else { 0 })
    }
}

/// Unrolls one `[c, h, w]` image into a `[c*kh*kw, oh*ow]` column matrix,
/// zero-filling padded taps.
pub fn im2col<T: Element>(x: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let npix = oh * ow;
    for c in 0..spec.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * npix;
                let dst = &mut cols[row..row + npix];
                for oy in 0..oh {
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj * dw) as isize - pw as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto a `[c, h, w]` image,
/// accumulating overlapping taps.
pub fn col2im<T: Element>(cols: &[T], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, x: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let npix = oh * ow;
    for c in 0..spec.in_channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * npix;
                let src = &cols[row..row + npix];
                for oy in 0..oh {
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * sw + kj * dw) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Cross-correlation of a `[b, c_in, h, w]` input with a
    /// `[c_out, c_in, kh, kw]` weight.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
        let xs = self.shape();
        let [b, c, h, w] = xs[..] else {
            return Err(Error::shape("conv2d", format!("input must be [b,c,h,w], got {xs:?}")));
        };
        if c != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, spec expects {}", spec.in_channels),
            ));
        }
        if weight.shape() != spec.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!("weight {:?}, spec expects {:?}", weight.shape(), spec.weight_shape()),
            ));
        }
        if let Some(bt) = bias {
            if bt.shape() != [spec.out_channels] {
                return Err(Error::shape("conv2d", format!("bias {:?}", bt.shape())));
            }
        }
        let spec = *spec;
        let (oh, ow) = spec.output_size(h, w)?;
        let (co, kl, npix) = (spec.out_channels, spec.patch_len(), oh * ow);
        let mut out = NdArray::zeros(&[b, co, oh, ow]);
        {
            let xv = self.value();
            let wv = weight.value();
            let bv = bias.map(|t| t.value());
            let wm = MatRef::row_major(wv.data(), co, kl);
            out.data_mut()
                .par_chunks_mut(co * npix)
                .zip(xv.data().par_chunks(c * h * w))
                .for_each_init(
                    || vec![T::zero(); kl * npix],
                    |cols, (o, x)| {
                        im2col(x, h, w, &spec, oh, ow, cols);
                        if let Some(bv) = bv.as_ref() {
                            for (oc, &bias) in bv.data().iter().enumerate() {
                                o[oc * npix..(oc + 1) * npix].fill(bias);
                            }
                        }
                        let beta = if bv.is_some() { T::one() } else { T::zero() };
                        gemm(T::one(), wm, MatRef::row_major(cols, kl, npix), beta, o);
                    },
                );
        }
        flops::record(spec.flops(b, h, w, bias.is_some())?);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(Tensor::from_op("conv2d", out, &parents, move |args| {
            let (xv, wv, g) = (args.inputs[0], args.inputs[1], args.grad.data());
            let wm = MatRef::row_major(wv.data(), co, kl);
            let gx = args.needs[0].then(|| {
                let mut gx = NdArray::zeros(xv.shape());
                gx.data_mut()
                    .par_chunks_mut(c * h * w)
                    .zip(g.par_chunks(co * npix))
                    .for_each_init(
                        || vec![T::zero(); kl * npix],
                        |dcols, (dx, gb)| {
                            gemm(T::one(), wm.t(), MatRef::row_major(gb, co, npix), T::zero(), dcols);
                            col2im(dcols, h, w, &spec, oh, ow, dx);
                        },
                    );
                gx
            });
            let gw = args.needs[1].then(|| {
                let partials: Vec<Vec<T>> = xv
                    .data()
                    .par_chunks(c * h * w)
                    .zip(g.par_chunks(co * npix))
                    .map(|(x, gb)| {
                        let mut cols = vec![T::zero(); kl * npix];
                        im2col(x, h, w, &spec, oh, ow, &mut cols);
                        let mut part = vec![T::zero(); co * kl];
                        let cm = MatRef::row_major(&cols, kl, npix);
                        gemm(T::one(), MatRef::row_major(gb, co, npix), cm.t(), T::zero(), &mut part);
                        part
                    })
                    .collect();
                let mut gw = NdArray::zeros(wv.shape());
                for part in &partials {
                    for (acc, &v) in gw.data_mut().iter_mut().zip(part) {
                        *acc += v;
                    }
                }
                gw
            });
            let mut grads = vec![gx, gw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut gb = vec![T::zero(); co];
                    for bi in 0..b {
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            let s = (bi * co + oc) * npix;
                            *acc += g[s..s + npix].iter().copied().sum::<T>();
                        }
                    }
                    NdArray::new(&[co], gb).expect("bias shape")
                }));
            }
            grads
        }))
    }
}
