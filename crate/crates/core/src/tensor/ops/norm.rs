use crate::tensor::{flops, lit, Element, NdArray, Tensor};
use crate::{Error, Result};

/// Per-group statistics computed by a normalizing forward pass. `var` is the
/// biased (population) variance used for normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per group, for unbiased running-variance updates.
    pub count: usize,
}

fn check_affine<T: Element>(op: &'static str, x: &[usize], gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<[usize; 4]> {
    let [b, c, h, w] = x[..] else {
        return Err(Error::shape(op, format!("expected [b,c,h,w], got {x:?}")));
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            op,
            format!("scale {:?} / shift {:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok([b, c, h, w])
}

/// Normalizes over groups of `[b, c, h, w]` elements: one group per channel
/// (batch statistics) or one per (sample, channel) pair (instance statistics).
fn group_norm<T: Element>(
    op: &'static str,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
    per_instance: bool,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let [b, c, h, w] = check_affine(op, &x.shape(), gamma, beta)?;
    let hw = h * w;
    let (groups, count) = if per_instance { (b * c, hw) } else { (c, b * hw) };
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "{op} needs at least 2 values per normalization group, got {count}"
        )));
    }
    let group_of = move |plane: usize| if per_instance { plane } else { plane % c };
    let m = lit::<T>(count as f64);
    let mut mean = vec![T::zero(); groups];
    let mut var = vec![T::zero(); groups];
    let mut out = x.to_array();
    {
        let d = out.data_mut();
        for p in 0..b * c {
            let g = group_of(p);
            mean[g] += d[p * hw..(p + 1) * hw].iter().copied().sum::<T>();
        }
        for v in mean.iter_mut() {
            *v /= m;
        }
        for p in 0..b * c {
            let g = group_of(p);
            for &v in &d[p * hw..(p + 1) * hw] {
                let dv = v - mean[g];
                var[g] += dv * dv;
            }
        }
        for v in var.iter_mut() {
            *v /= m;
        }
        let (gv, bv) = (gamma.value(), beta.value());
        for p in 0..b * c {
            let g = group_of(p);
            let ch = p % c;
            let inv = T::one() / (var[g] + lit(eps)).sqrt();
            let (sc, sh) = (gv.data()[ch], bv.data()[ch]);
            for v in &mut d[p * hw..(p + 1) * hw] {
                *v = (*v - mean[g]) * inv * sc + sh;
            }
        }
    }
    flops::record(flops::NORM_STATS_PER_ELEMENT * out.numel() as u64);
    let stats = NormStats {
        mean: mean.clone(),
        var: var.clone(),
        count,
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + lit(eps)).sqrt()).collect();
    let y = Tensor::from_op(op, out, &[x, gamma, beta], move |args| {
        let (xd, gam, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
        let xhat = |i: usize, grp: usize| (xd[i] - mean[grp]) * inv_std[grp];
        let mut sum1 = vec![T::zero(); groups];
        let mut sum2 = vec![T::zero(); groups];
        let mut ggam = vec![T::zero(); c];
        let mut gbet = vec![T::zero(); c];
        for p in 0..b * c {
            let (grp, ch) = (group_of(p), p % c);
            for i in p * hw..(p + 1) * hw {
                let xh = xhat(i, grp);
                let dxh = g[i] * gam[ch];
                sum1[grp] += dxh;
                sum2[grp] += dxh * xh;
                ggam[ch] += g[i] * xh;
                gbet[ch] += g[i];
            }
        }
        let gx = args.needs[0].then(|| {
            let mut gx = NdArray::zeros(args.inputs[0].shape());
            let gd = gx.data_mut();
            for p in 0..b * c {
                let (grp, ch) = (group_of(p), p % c);
                let k = inv_std[grp] / m;
                for i in p * hw..(p + 1) * hw {
                    let dxh = g[i] * gam[ch];
                    gd[i] = k * (m * dxh - sum1[grp] - xhat(i, grp) * sum2[grp]);
                }
            }
            gx
        });
        vec![
            gx,
            Some(NdArray::new(&[c], ggam).expect("scale shape")),
            Some(NdArray::new(&[c], gbet).expect("shift shape")),
        ]
    });
    Ok((y, stats))
}

impl<T: Element> Tensor<T> {
    /// Training-mode batch normalization: statistics per channel over
    /// `(b, h, w)`. Returns the batch statistics for running-average updates.
    pub fn batch_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, NormStats<T>)> {
        group_norm("batch_norm", self, gamma, beta, eps, false)
    }

    /// Instance normalization: statistics per `(sample, channel)` over `(h, w)`.
    pub fn instance_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        Ok(group_norm("instance_norm", self, gamma, beta, eps, true)?.0)
    }

    /// Batch normalization with frozen statistics: `(x - mean) / sqrt(var + eps) * gamma + beta`.
    pub fn batch_norm_frozen(
        &self,
        mean: &[T],
        var: &[T],
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let [_, c, h, w] = check_affine("batch_norm_frozen", &self.shape(), gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batch_norm_frozen", format!("statistics for {} channels, input has {c}", mean.len())));
        }
        let hw = h * w;
        let mean = mean.to_vec();
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + lit(eps)).sqrt()).collect();
        let mut out = self.to_array();
        {
            let (gv, bv) = (gamma.value(), beta.value());
            for (p, plane) in out.data_mut().chunks_mut(hw).enumerate() {
                let ch = p % c;
                for v in plane {
                    *v = (*v - mean[ch]) * inv[ch] * gv.data()[ch] + bv.data()[ch];
                }
            }
        }
        flops::record(flops::NORM_FROZEN_PER_ELEMENT * out.numel() as u64);
        Ok(Tensor::from_op("batch_norm_frozen", out, &[self, gamma, beta], move |args| {
            let (xd, gam, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
            let mut gx = NdArray::zeros(args.inputs[0].shape());
            let mut ggam = vec![T::zero(); c];
            let mut gbet = vec![T::zero(); c];
            for (p, gplane) in g.chunks(hw).enumerate() {
                let ch = p % c;
                for (k, &gi) in gplane.iter().enumerate() {
                    let i = p * hw + k;
                    gx.data_mut()[i] = gi * gam[ch] * inv[ch];
                    ggam[ch] += gi * (xd[i] - mean[ch]) * inv[ch];
                    gbet[ch] += gi;
                }
            }
            vec![
                Some(gx),
                Some(NdArray::new(&[c], ggam).expect("scale shape")),
                Some(NdArray::new(&[c], gbet).expect("shift shape")),
            ]
        }))
    }
}
