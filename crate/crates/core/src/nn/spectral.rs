use rand::Rng;

use super::{join, Conv2d, Mode, Module, StateKind};
use crate::tensor::linalg::{gemm, MatRef};
use crate::tensor::{lit, ConvSpec, Element, NdArray, Tensor};
use crate::{Error, Result};

/// Lower bound applied to the estimated spectral norm before dividing.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent singular-vector estimates for one weight, viewed as
/// `[shape[0], prod(shape[1..])]`.
pub struct PowerIteration<T: Element> {
    pub u: Tensor<T>,
    pub v: Tensor<T>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(SIGMA_FLOOR);
    v.iter_mut().for_each(|x| *x /= n);
}

fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [] => Err(Error::shape("spectral_normalize", "weight must have at least one axis")),
        [r] => Ok((*r, 1)),
        [r, rest @ ..] => Ok((*r, rest.iter().product())),
    }
}

impl<T: Element> PowerIteration<T> {
    pub fn new(weight_shape: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let (rows, cols) = matrix_dims(weight_shape)?;
        let mut u = NdArray::<f64>::randn(&[rows], 1.0, rng).into_data();
        let mut v = NdArray::<f64>::randn(&[cols], 1.0, rng).into_data();
        normalize(&mut u);
        normalize(&mut v);
        let to_t = |d: Vec<f64>| d.into_iter().map(T::from_f64).collect::<Vec<T>>();
        Ok(PowerIteration {
            u: Tensor::constant(NdArray::new(&[rows], to_t(u))?),
            v: Tensor::constant(NdArray::new(&[cols], to_t(v))?),
        })
    }

    /// Runs `iters` rounds of `v = Wᵀu/‖·‖, u = Wv/‖·‖` against `weight`.
    pub fn step(&self, weight: &NdArray<T>, iters: usize) -> Result<()> {
        let (rows, cols) = matrix_dims(weight.shape())?;
        if self.u.numel() != rows || self.v.numel() != cols {
            return Err(Error::shape(
                "power_iteration",
                format!("vectors sized {}x{} for weight {:?}", self.u.numel(), self.v.numel(), weight.shape()),
            ));
        }
        let w: Vec<f64> = weight.data().iter().map(|x| x.to_f64()).collect();
        let mut u: Vec<f64> = self.u.value().data().iter().map(|x| x.to_f64()).collect();
        let mut v: Vec<f64> = self.v.value().data().iter().map(|x| x.to_f64()).collect();
        for _ in 0..iters {
            v.iter_mut().for_each(|x| *x = 0.0);
            for (i, ui) in u.iter().enumerate() {
                for (vj, wij) in v.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                    *vj += wij * ui;
                }
            }
            normalize(&mut v);
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = w[i * cols..(i + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            normalize(&mut u);
        }
        self.u.set_value(NdArray::new(&[rows], u.into_iter().map(T::from_f64).collect())?)?;
        self.v.set_value(NdArray::new(&[cols], v.into_iter().map(T::from_f64).collect())?)?;
        Ok(())
    }

    /// Equivalent to `2^squarings` rounds of [`PowerIteration::step`]: the
    /// Gram matrix on the smaller side of `W` is squared `squarings` times and
    /// applied to the stored vector, then one ordinary round aligns `u` and `v`.
    pub fn step_squared(&self, weight: &NdArray<T>, squarings: u32) -> Result<()> {
        let (rows, cols) = matrix_dims(weight.shape())?;
        if self.u.numel() != rows || self.v.numel() != cols {
            return Err(Error::shape(
                "power_iteration",
                format!("vectors sized {}x{} for weight {:?}", self.u.numel(), self.v.numel(), weight.shape()),
            ));
        }
        let w: Vec<f64> = weight.data().iter().map(|x| x.to_f64()).collect();
        let left = rows <= cols;
        let m = rows.min(cols);
        let wm = MatRef::row_major(&w, rows, cols);
        let (a, b) = if left { (wm, wm.t()) } else { (wm.t(), wm) };
        let mut g = vec![0.0; m * m];
        gemm(1.0, a, b, 0.0, &mut g);
        let mut sq = vec![0.0; m * m];
        for _ in 0..squarings {
            let scale = g.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if scale == 0.0 {
                break;
            }
            g.iter_mut().for_each(|x| *x /= scale);
            gemm(1.0, MatRef::row_major(&g, m, m), MatRef::row_major(&g, m, m), 0.0, &mut sq);
            std::mem::swap(&mut g, &mut sq);
        }
        let side = if left { &self.u } else { &self.v };
        let x0: Vec<f64> = side.value().data().iter().map(|x| x.to_f64()).collect();
        let mut x: Vec<f64> = (0..m).map(|i| g[i * m..(i + 1) * m].iter().zip(&x0).map(|(a, b)| a * b).sum()).collect();
        if x.iter().all(|&v| v == 0.0) {
            x = x0;
        }
        normalize(&mut x);
        side.set_value(NdArray::new(&[m], x.into_iter().map(T::from_f64).collect())?)?;
        if !left {
            // Move the refined right vector into `u` so the ordinary round
            // below starts from it.
            let v = self.v.value().data().iter().map(|x| x.to_f64()).collect::<Vec<_>>();
            let mut u: Vec<f64> = (0..rows).map(|i| w[i * cols..(i + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            normalize(&mut u);
            self.u.set_value(NdArray::new(&[rows], u.into_iter().map(T::from_f64).collect())?)?;
        }
        self.step(weight, 1)
    }

    /// Iterates until `‖Wᵀu − σ̂v‖ ≤ tol·σ̂` or `max_iters` rounds have run.
    /// Returns σ̂ and the number of rounds used.
    pub fn converge(&self, weight: &NdArray<T>, tol: f64, max_iters: usize) -> Result<(f64, usize)> {
        let (rows, cols) = matrix_dims(weight.shape())?;
        let mut used = 0;
        loop {
            let sigma = self.sigma(weight)?;
            let residual = {
                let (u, v) = (self.u.value(), self.v.value());
                (0..cols)
                    .map(|j| {
                        let wtu: f64 = (0..rows).map(|i| weight.data()[i * cols + j].to_f64() * u.data()[i].to_f64()).sum();
                        (wtu - sigma * v.data()[j].to_f64()).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            if residual <= tol * sigma.abs() || used >= max_iters {
                return Ok((sigma, used));
            }
            let chunk = 10.min(max_iters - used);
            self.step(weight, chunk)?;
            used += chunk;
        }
    }

    /// `uᵀ W v` for the current vectors.
    pub fn sigma(&self, weight: &NdArray<T>) -> Result<f64> {
        let (rows, cols) = matrix_dims(weight.shape())?;
        let u = self.u.value();
        let v = self.v.value();
        let mut s = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                s += u.data()[i].to_f64() * weight.data()[i * cols + j].to_f64() * v.data()[j].to_f64();
            }
        }
        Ok(s)
    }
}

/// Returns `W / σ̂` after `iters` power-iteration steps, plus σ̂. The estimate
/// `σ̂ = uᵀWv` is differentiated through `W` with `u`, `v` held fixed.
pub fn spectral_normalize<T: Element>(
    weight: &Tensor<T>,
    state: &PowerIteration<T>,
    iters: usize,
) -> Result<(Tensor<T>, f64)> {
    let shape = weight.shape();
    let (rows, cols) = matrix_dims(&shape)?;
    state.step(&weight.value(), iters)?;
    let outer = {
        let u = state.u.value();
        let v = state.v.value();
        NdArray::from_fn(&[rows, cols], |k| u.data()[k / cols] * v.data()[k % cols])
    };
    let w2 = weight.reshape(&[rows, cols])?;
    let mut sigma = w2.mul(&Tensor::constant(outer))?.sum();
    let s = sigma.item().to_f64();
    if s < SIGMA_FLOOR {
        sigma = Tensor::scalar(lit(SIGMA_FLOOR));
    }
    Ok((weight.div(&sigma)?, s.max(SIGMA_FLOOR)))
}

/// Gram squarings per training forward; the stored singular vectors see the
/// equivalent of `2^SN_SQUARINGS` power-iteration rounds.
pub const SN_SQUARINGS: u32 = 10;

/// Convolution whose kernel is divided by its estimated spectral norm on
/// every forward pass. In training mode the persistent vectors are refined
/// with [`PowerIteration::step_squared`] first; evaluation reuses them.
pub struct SpectralConv2d<T: Element> {
    pub conv: Conv2d<T>,
    pub power: PowerIteration<T>,
    pub squarings: u32,
}

impl<T: Element> SpectralConv2d<T> {
    pub fn new(spec: ConvSpec, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let conv = Conv2d::new(spec, bias, rng);
        let power = PowerIteration::new(&spec.weight_shape(), rng)?;
        power.step_squared(&conv.weight.value(), SN_SQUARINGS)?;
        Ok(SpectralConv2d { conv, power, squarings: SN_SQUARINGS })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Train {
            self.power.step_squared(&self.conv.weight.value(), self.squarings)?;
        }
        let (w, _) = spectral_normalize(&self.conv.weight, &self.power, 0)?;
        x.conv2d(&w, self.conv.bias.as_ref(), &self.conv.spec)
    }

    /// Re-estimates σ̂ for the current kernel, e.g. after an optimizer step.
    pub fn refresh(&self) -> Result<()> {
        self.power.step_squared(&self.conv.weight.value(), self.squarings)
    }

    /// The kernel as used by the last forward pass, reshaped to a matrix.
    pub fn normalized_weight(&self) -> Result<NdArray<T>> {
        let w = self.conv.weight.to_array();
        let s = self.power.sigma(&w)?.max(SIGMA_FLOOR);
        let (rows, cols) = matrix_dims(w.shape())?;
        w.map(|x| lit::<T>(x.to_f64() / s)).reshape(&[rows, cols])
    }
}

impl<T: Element> Module<T> for SpectralConv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.conv.visit(prefix, f);
        f(&join(prefix, "sn_u"), &self.power.u, StateKind::Buffer);
        f(&join(prefix, "sn_v"), &self.power.v, StateKind::Buffer);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_weight_normalizes_to_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::parameter(NdArray::new(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap());
        let pi = PowerIteration::<f64>::new(&[2, 2], &mut rng).unwrap();
        let (wn, sigma) = spectral_normalize(&w, &pi, 50).unwrap();
        assert!((sigma - 3.0).abs() < 1e-9);
        let d = wn.to_array().into_data();
        assert!((d[0] - 1.0).abs() < 1e-9 && (d[3] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_is_floored_not_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::parameter(NdArray::<f64>::zeros(&[3, 4]));
        let pi = PowerIteration::new(&[3, 4], &mut rng).unwrap();
        let (wn, sigma) = spectral_normalize(&w, &pi, 1).unwrap();
        assert_eq!(sigma, SIGMA_FLOOR);
        assert!(wn.to_array().all_finite());
    }

    #[test]
    fn state_persists_between_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Tensor::parameter(NdArray::<f64>::randn(&[4, 6], 1.0, &mut rng));
        let pi = PowerIteration::new(&[4, 6], &mut rng).unwrap();
        let before = pi.u.to_array();
        spectral_normalize(&w, &pi, 1).unwrap();
        assert!(pi.u.to_array().max_abs_diff(&before) > 0.0);
    }

    #[test]
    fn squared_steps_separate_close_singular_values() {
        for (rows, cols) in [(3, 5), (5, 3)] {
            let mut w = NdArray::<f64>::zeros(&[rows, cols]);
            for (k, s) in [1.0, 0.99, 0.5].into_iter().enumerate() {
                w.data_mut()[k * cols + k] = s;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let pi = PowerIteration::new(&[rows, cols], &mut rng).unwrap();
            pi.step_squared(&w, 12).unwrap();
            assert!((pi.sigma(&w).unwrap() - 1.0).abs() < 1e-9, "{rows}x{cols}");
        }
    }
}
