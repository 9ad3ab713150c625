use crate::tensor::linalg::{gemm, MatRef};
use crate::tensor::{flops, Element, NdArray, Tensor};
use crate::{Error, Result};

/// `[m, k]` or `[batch, m, k]` viewed as (batch, rows, cols).
fn as_batched(shape: &[usize]) -> Option<(Option<usize>, usize, usize)> {
    match *shape {
        [m, k] => Some((None, m, k)),
        [b, m, k] => Some((Some(b), m, k)),
        _ => None,
    }
}

impl<T: Element> Tensor<T> {
    /// Matrix product of `[m,k]` / `[B,m,k]` with `[k,n]` / `[B,k,n]`. An
    /// unbatched operand is shared across the batch of the other.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let err = || Error::shape("matmul", format!("{sa:?} @ {sb:?}"));
        let (ba, m, k) = as_batched(&sa).ok_or_else(err)?;
        let (bb, k2, n) = as_batched(&sb).ok_or_else(err)?;
        if k != k2 {
            return Err(err());
        }
        let batch = match (ba, bb) {
            (Some(x), Some(y)) if x != y => return Err(err()),
            (Some(x), _) | (_, Some(x)) => Some(x),
            (None, None) => None,
        };
        let nb = batch.unwrap_or(1);
        let out_shape: Vec<usize> = match batch {
            Some(b) => vec![b, m, n],
            None => vec![m, n],
        };
        let (a_step, b_step) = (ba.map_or(0, |_| m * k), bb.map_or(0, |_| k * n));
        let mut out = NdArray::zeros(&out_shape);
        {
            let (av, bv) = (self.value(), other.value());
            for i in 0..nb {
                let a = MatRef::row_major(&av.data()[i * a_step..], m, k);
                let b = MatRef::row_major(&bv.data()[i * b_step..], k, n);
                gemm(T::one(), a, b, T::zero(), &mut out.data_mut()[i * m * n..]);
            }
        }
        flops::record(2 * (nb * m * k * n) as u64);
        Ok(Tensor::from_op("matmul", out, &[self, other], move |args| {
            let (av, bv, g) = (args.inputs[0], args.inputs[1], args.grad.data());
            let mut ga = args.needs[0].then(|| NdArray::zeros(av.shape()));
            let mut gb = args.needs[1].then(|| NdArray::zeros(bv.shape()));
            for i in 0..nb {
                let gi = MatRef::row_major(&g[i * m * n..], m, n);
                if let Some(ga) = ga.as_mut() {
                    // dA = dC @ B^T, accumulated when A is shared
                    let b = MatRef::row_major(&bv.data()[i * b_step..], k, n);
                    let beta = if a_step == 0 { T::one() } else { T::zero() };
                    gemm(T::one(), gi, b.t(), beta, &mut ga.data_mut()[i * a_step..]);
                }
                if let Some(gb) = gb.as_mut() {
                    let a = MatRef::row_major(&av.data()[i * a_step..], m, k);
                    let beta = if b_step == 0 { T::one() } else { T::zero() };
                    gemm(T::one(), a.t(), gi, beta, &mut gb.data_mut()[i * b_step..]);
                }
            }
            vec![ga, gb]
        }))
    }

    /// Affine map over the trailing axis: `x @ W^T + b` with `W: [d_out, d_in]`.
    /// Leading axes are batch axes sharing the same weights.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let (Some(&d_in), [d_out, w_in]) = (xs.last(), ws.as_slice()) else {
            return Err(Error::shape("linear", format!("input {xs:?}, weight {ws:?}")));
        };
        let d_out = *d_out;
        if *w_in != d_in {
            return Err(Error::shape(
                "linear",
                format!("trailing dimension {d_in} does not match weight input {w_in}"),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?}, expected [{d_out}]", b.shape())));
            }
        }
        let rows = self.numel() / d_in.max(1);
        let mut out_shape = xs.clone();
        *out_shape.last_mut().expect("non-empty") = d_out;
        let mut out = NdArray::zeros(&out_shape);
        {
            let (xv, wv) = (self.value(), weight.value());
            let od = out.data_mut();
            if let Some(b) = bias {
                let bv = b.value();
                for r in 0..rows {
                    od[r * d_out..(r + 1) * d_out].copy_from_slice(bv.data());
                }
            }
            let x = MatRef::row_major(xv.data(), rows, d_in);
            let w = MatRef::row_major(wv.data(), d_out, d_in);
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            gemm(T::one(), x, w.t(), beta, od);
        }
        let bias_flops = if bias.is_some() { rows * d_out } else { 0 };
        flops::record((2 * rows * d_in * d_out + bias_flops) as u64);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        Ok(Tensor::from_op("linear", out, &parents, move |args| {
            let (xv, wv, g) = (args.inputs[0], args.inputs[1], args.grad.data());
            let gm = MatRef::row_major(g, rows, d_out);
            let gx = args.needs[0].then(|| {
                let mut gx = NdArray::zeros(xv.shape());
                gemm(T::one(), gm, MatRef::row_major(wv.data(), d_out, d_in), T::zero(), gx.data_mut());
                gx
            });
            let gw = args.needs[1].then(|| {
                let mut gw = NdArray::zeros(wv.shape());
                let x = MatRef::row_major(xv.data(), rows, d_in);
                gemm(T::one(), gm.t(), x, T::zero(), gw.data_mut());
                gw
            });
            let mut grads = vec![gx, gw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut gb = vec![T::zero(); d_out];
                    for r in 0..rows {
                        for (acc, &v) in gb.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                            *acc += v;
                        }
                    }
                    NdArray::new(&[d_out], gb).expect("bias shape")
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loop_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn linear_identity_weight_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::constant(NdArray::randn(&[4, 3], 1.0, &mut rng));
        let w = Tensor::constant(NdArray::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = Tensor::constant(NdArray::zeros(&[3]));
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.to_array(), x.to_array());
    }

    #[test]
    fn linear_zero_weight_gives_bias_rows() {
        let x = Tensor::<f64>::constant(NdArray::full(&[5, 2], 3.0));
        let w = Tensor::constant(NdArray::zeros(&[3, 2]));
        let b = Tensor::constant(NdArray::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = x.linear(&w, Some(&b)).unwrap();
        for r in 0..5 {
            assert_eq!(&y.value().data()[r * 3..r * 3 + 3], &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn linear_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = NdArray::<f64>::randn(&[4, 6], 1.0, &mut rng);
        let w = NdArray::<f64>::randn(&[3, 6], 1.0, &mut rng);
        let y = Tensor::constant(x.clone())
            .linear(&Tensor::constant(w.clone()), None)
            .unwrap();
        for r in 0..4 {
            for o in 0..3 {
                let want: f64 = (0..6).map(|i| x.data()[r * 6 + i] * w.data()[o * 6 + i]).sum();
                assert!((y.value().data()[r * 3 + o] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn linear_rejects_trailing_mismatch() {
        let x = Tensor::<f64>::constant(NdArray::zeros(&[2, 4]));
        let w = Tensor::constant(NdArray::zeros(&[3, 5]));
        assert!(matches!(x.linear(&w, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn batched_matmul_with_shared_lhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = NdArray::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let b = NdArray::<f64>::randn(&[2, 4, 5], 1.0, &mut rng);
        let c = Tensor::constant(a.clone()).matmul(&Tensor::constant(b.clone())).unwrap();
        assert_eq!(c.shape(), vec![2, 3, 5]);
        for i in 0..2 {
            let want = loop_matmul(a.data(), &b.data()[i * 20..(i + 1) * 20], 3, 4, 5);
            for (x, y) in c.value().data()[i * 15..(i + 1) * 15].iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Channel Gram matrix `F F^T / (c h w)` of a `[b, c, h, w]` feature map,
    /// where `F` is the `c x (h w)` flattening.
    pub fn gram_matrix(&self) -> Result<Tensor<T>> {
        let [b, c, h, w] = self.shape()[..] else {
            return Err(Error::shape("gram_matrix", format!("expected [b,c,h,w], got {:?}", self.shape())));
        };
        let f = self.reshape(&[b, c, h * w])?;
        let ft = f.permute(&[0, 2, 1])?;
        Ok(f.matmul(&ft)?.mul_scalar(1.0 / (c * h * w) as f64))
    }
}

#[cfg(test)]
mod gram_tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ones_channel() {
        let x = Tensor::<f64>::constant(NdArray::ones(&[1, 1, 2, 2]));
        assert_eq!(x.gram_matrix().unwrap().item(), 1.0);
    }

    #[test]
    fn orthogonal_channels_have_zero_cross_terms() {
        let mut x = NdArray::<f64>::zeros(&[1, 2, 2, 2]);
        x.set(&[0, 0, 0, 0], 1.0);
        x.set(&[0, 1, 1, 1], 1.0);
        let g = Tensor::constant(x).gram_matrix().unwrap().to_array();
        assert_eq!(g.get(&[0, 0, 1]), 0.0);
        assert_eq!(g.get(&[0, 1, 0]), 0.0);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = NdArray::<f64>::randn(&[2, 3, 4, 5], 1.0, &mut rng);
        let g = Tensor::constant(x.clone()).gram_matrix().unwrap().to_array();
        for n in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for y in 0..4 {
                        for z in 0..5 {
                            acc += x.get(&[n, i, y, z]) * x.get(&[n, j, y, z]);
                        }
                    }
                    assert!((g.get(&[n, i, j]) - acc / 60.0).abs() < 1e-6);
                    assert_eq!(g.get(&[n, i, j]), g.get(&[n, j, i]));
                }
            }
        }
    }
}
