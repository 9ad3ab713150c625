//! Finite-difference verification of autodiff gradients.
//!
//! Each checked input must be a leaf parameter. Its analytic gradient is
//! compared with the central difference `(f(x + eps) - f(x - eps)) / 2 eps`
//! coordinate by coordinate. The error measure is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`, so gradients
//! smaller than `floor` are compared on an absolute scale.

mod cases;

pub use cases::{standard_cases, Case, Scenario};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{no_grad, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    /// Retries a failing coordinate with the step divided by 10, up to this many times.
    pub refinements: u32,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-3,
            max_coords: None,
            refinements: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares autodiff and central-difference gradients of the scalar `f` with
/// respect to each tensor in `inputs`.
///
/// `f` is re-evaluated for every perturbed coordinate and must read the
/// current values of `inputs` each time it runs.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor<f64>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    for t in inputs {
        if !(t.is_leaf() && t.requires_grad()) {
            return Err(Error::InvalidArgument("grad_check inputs must be parameter leaves".into()));
        }
        t.zero_grad();
    }
    let out = f()?;
    if out.numel() != 1 {
        return Err(Error::NonScalar(out.shape()));
    }
    out.backward()?;
    drop(out);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reports = Vec::with_capacity(inputs.len());
    for t in inputs {
        let analytic = t
            .grad()
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let base = t.to_array();
        let n = base.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut report = InputReport {
            max_rel_error: 0.0,
            coords_checked: coords.len(),
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &coords {
            let mut probe = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v.data_mut()[i] += delta;
                t.set_value(v)?;
                let y = no_grad(&mut f)?;
                Ok(y.item())
            };
            // A ReLU kink inside [x - eps, x + eps] spoils the central
            // difference; shrinking the step moves it out, a wrong gradient
            // stays wrong at every step.
            let mut err = f64::INFINITY;
            let mut numeric = 0.0;
            for refine in 0..=opts.refinements {
                let eps = opts.eps / 10f64.powi(refine as i32);
                let plus = probe(eps)?;
                let minus = probe(-eps)?;
                let nd = (plus - minus) / (2.0 * eps);
                let e = rel_error(analytic[i], nd, opts.floor);
                if e < err {
                    err = e;
                    numeric = nd;
                }
                if err <= opts.tol {
                    break;
                }
            }
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_coord = i;
                report.analytic = analytic[i];
                report.numeric = numeric;
            }
        }
        t.set_value(base)?;
        reports.push(report);
    }
    Ok(GradCheckReport {
        inputs: reports,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::NdArray;

    #[test]
    fn sum_of_squares_has_gradient_two_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::parameter(NdArray::<f64>::randn(&[3, 4], 1.0, &mut rng));
        let xc = x.clone();
        let report = grad_check(
            || Ok(xc.square().sum()),
            std::slice::from_ref(&x),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-7, "{report:?}");
        let g = x.grad().unwrap();
        for (gi, xi) in g.data().iter().zip(x.value().data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::parameter(NdArray::<f64>::ones(&[2]));
        let xc = x.clone();
        let err = grad_check(|| Ok(xc.mul_scalar(2.0)), &[x], &GradCheckOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonScalar(_)));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides the dependence from autodiff but not from differences
        let x = Tensor::parameter(NdArray::<f64>::full(&[2], 1.5));
        let xc = x.clone();
        let report = grad_check(
            || xc.mul(&xc.detach()).map(|t| t.sum()),
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
    }
}
