//! Reconstruction, perceptual, style and relativistic adversarial losses.
//!
//! Every `‖·‖₁` is a mean over elements, so the weights do not depend on
//! image or feature-map size.

mod extractor;

pub use extractor::{build_default_extractor, FeatureExtractor, Stage, DEFAULT_EXTRACTOR_CHANNELS};

use serde::{Deserialize, Serialize};

use crate::tensor::{no_grad, Element, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_per: f64,
    pub w_sty: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_l1: 1.0, w_per: 0.1, w_sty: 250.0, w_adv: 0.1 }
    }
}

impl LossWeights {
    pub fn l1_only() -> Self {
        LossWeights { w_l1: 1.0, w_per: 0.0, w_sty: 0.0, w_adv: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_l1", self.w_l1), ("w_per", self.w_per), ("w_sty", self.w_sty), ("w_adv", self.w_adv)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!("loss weight {name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", pred, gt)?;
    Ok(pred.sub(gt)?.abs().mean())
}

/// Sum over stages of the mean absolute feature difference.
pub fn perceptual_loss<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, fx: &FeatureExtractor<T>) -> Result<Tensor<T>> {
    same_shape("perceptual_loss", pred, gt)?;
    let (fp, fg) = (fx.features(pred)?, no_grad(|| fx.features(gt))?);
    stage_sum(&fp, &fg, |a, b| l1_loss(a, b))
}

/// Sum over stages of the mean absolute Gram-matrix difference.
pub fn style_loss<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, fx: &FeatureExtractor<T>) -> Result<Tensor<T>> {
    same_shape("style_loss", pred, gt)?;
    let (fp, fg) = (fx.features(pred)?, no_grad(|| fx.features(gt))?);
    stage_sum(&fp, &fg, gram_l1)
}

fn gram_l1<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    l1_loss(&a.gram_matrix()?, &b.gram_matrix()?)
}

fn stage_sum<T: Element>(
    fp: &[Tensor<T>],
    fg: &[Tensor<T>],
    term: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = None;
    for (a, b) in fp.iter().zip(fg) {
        let t = term(a, b)?;
        total = Some(match total {
            Some(s) => s.add(&t)?,
            None => t,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("feature extractor has no stages".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

/// Relativistic average least-squares loss. For the discriminator,
/// `E[(D(real) − E[D(fake)] − 1)²] + E[(D(fake) − E[D(real)] + 1)²]`; the
/// generator swaps real and fake. Means run over batch and patches.
pub fn rals_adversarial<T: Element>(real: &Tensor<T>, fake: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
    same_shape("rals_adversarial", real, fake)?;
    let (hi, lo) = match side {
        Side::Discriminator => (real, fake),
        Side::Generator => (fake, real),
    };
    let up = hi.sub(&lo.mean())?.add_scalar(-1.0).square().mean();
    let down = lo.sub(&hi.mean())?.add_scalar(1.0).square().mean();
    up.add(&down)
}

/// Unweighted value of every term, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l1: f64,
    pub perceptual: f64,
    pub style: f64,
    /// Absent when no discriminator scores were supplied.
    pub adversarial: Option<f64>,
    pub total: f64,
}

/// Weighted sum of the four generator terms. Terms with zero weight are still
/// evaluated for the report but kept out of the graph. `scores` holds the
/// discriminator's `(real, fake)` scores, if any.
pub fn total_generator_loss<T: Element>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    scores: Option<(&Tensor<T>, &Tensor<T>)>,
    weights: &LossWeights,
    fx: &FeatureExtractor<T>,
) -> Result<(Tensor<T>, LossReport)> {
    weights.validate()?;
    same_shape("total_generator_loss", pred, gt)?;
    let mut total = Tensor::scalar(T::zero());
    let mut add = |w: f64, term: Tensor<T>| -> Result<f64> {
        let v = term.item().to_f64();
        if w > 0.0 {
            total = total.add(&term.mul_scalar(w))?;
        }
        Ok(v)
    };
    let in_graph = |w: f64, f: &dyn Fn() -> Result<Tensor<T>>| if w > 0.0 { f() } else { no_grad(f) };

    let l1 = add(weights.w_l1, in_graph(weights.w_l1, &|| l1_loss(pred, gt))?)?;
    let need_features = weights.w_per > 0.0 || weights.w_sty > 0.0;
    let fp = if need_features { fx.features(pred)? } else { no_grad(|| fx.features(pred))? };
    let fg = no_grad(|| fx.features(gt))?;
    let perceptual = add(weights.w_per, in_graph(weights.w_per, &|| stage_sum(&fp, &fg, |a, b| l1_loss(a, b)))?)?;
    let style = add(weights.w_sty, in_graph(weights.w_sty, &|| stage_sum(&fp, &fg, gram_l1))?)?;
    let adversarial = match scores {
        Some((real, fake)) => Some(add(
            weights.w_adv,
            in_graph(weights.w_adv, &|| rals_adversarial(real, fake, Side::Generator))?,
        )?),
        None => None,
    };
    let report = LossReport { l1, perceptual, style, adversarial, total: total.item().to_f64() };
    Ok((total, report))
}
