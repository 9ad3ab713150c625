//! Local-global attention: a global branch (region attention, or contextual
//! attention for comparison) and a squeeze-excitation local branch, merged by
//! a two-way selective-kernel gate.

use rand::Rng;

use crate::nn::{join, Linear, Mode, Module, StateKind};
use crate::region::{cam_forward, context_mask, RaConfig, RegionAttention, RegionMask, CAM_PATCH, CAM_SCALE};
use crate::tensor::{Element, NdArray, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalKind {
    Region,
    Contextual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LgaConfig {
    pub ra: RaConfig,
    pub se_reduction: usize,
    pub sk_reduction: usize,
    pub channels: usize,
    pub global: GlobalKind,
}

impl LgaConfig {
    pub fn new(channels: usize, ra: RaConfig) -> Self {
        LgaConfig { ra, se_reduction: 4, sk_reduction: 4, channels, global: GlobalKind::Region }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, red) in [("se_reduction", self.se_reduction), ("sk_reduction", self.sk_reduction)] {
            if red == 0 || self.channels % red != 0 || self.channels / red == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{} channels are not divisible by {name} {red}",
                    self.channels
                )));
            }
        }
        self.ra.validate()
    }
}

fn flat<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1]])
}

fn per_channel<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1], 1, 1])
}

/// Channel gating: GAP → fc → relu → fc → sigmoid → rescale.
pub struct SqueezeExcite<T: Element> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Element> SqueezeExcite<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = channels / reduction;
        SqueezeExcite { fc1: Linear::new(channels, hidden, true, rng), fc2: Linear::new(hidden, channels, true, rng) }
    }

    /// Per-channel gate in (0, 1), `[b, c]`.
    pub fn gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = flat(&x.global_avg_pool()?)?;
        Ok(self.fc2.forward(&self.fc1.forward(&s)?.relu())?.sigmoid())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.mul(&per_channel(&self.gate(x)?)?)
    }
}

impl<T: Element> Module<T> for SqueezeExcite<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

/// Two-branch selective fusion with a per-channel softmax across branches.
pub struct SelectiveFusion<T: Element> {
    pub fc: Linear<T>,
    pub to_global: Linear<T>,
    pub to_local: Linear<T>,
}

/// Output of [`SelectiveFusion::forward`].
pub struct Fused<T: Element> {
    pub output: Tensor<T>,
    /// Weight of the global branch per channel, `[b, c]`.
    pub a: Tensor<T>,
    /// Weight of the local branch, `1 - a`.
    pub b: Tensor<T>,
}

impl<T: Element> SelectiveFusion<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = channels / reduction;
        SelectiveFusion {
            fc: Linear::new(channels, hidden, true, rng),
            to_global: Linear::new(hidden, channels, true, rng),
            to_local: Linear::new(hidden, channels, true, rng),
        }
    }

    pub fn forward(&self, y_global: &Tensor<T>, y_local: &Tensor<T>) -> Result<Fused<T>> {
        if y_global.shape() != y_local.shape() {
            return Err(Error::shape(
                "selective_fusion",
                format!("branches differ: {:?} vs {:?}", y_global.shape(), y_local.shape()),
            ));
        }
        let u = y_global.add(y_local)?;
        let z = self.fc.forward(&flat(&u.global_avg_pool()?)?)?.relu();
        let (b, c) = (z.shape()[0], self.to_global.d_out());
        let lg = self.to_global.forward(&z)?.reshape(&[b, 1, c])?;
        let ll = self.to_local.forward(&z)?.reshape(&[b, 1, c])?;
        let sel = Tensor::concat(&[&lg, &ll], 1)?.softmax(1)?;
        let a = sel.narrow(1, 0, 1)?.reshape(&[b, c])?;
        let bw = sel.narrow(1, 1, 1)?.reshape(&[b, c])?;
        let output = y_global.mul(&per_channel(&a)?)?.add(&y_local.mul(&per_channel(&bw)?)?)?;
        Ok(Fused { output, a, b: bw })
    }
}

impl<T: Element> Module<T> for SelectiveFusion<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        self.fc.visit(&join(prefix, "fc"), f);
        self.to_global.visit(&join(prefix, "to_global"), f);
        self.to_local.visit(&join(prefix, "to_local"), f);
    }
}

pub enum GlobalBranch<T: Element> {
    Region(RegionAttention<T>),
    /// Contextual attention has no parameters; hole pixels are replaced by
    /// attention over known pixels, known pixels pass through.
    Contextual,
}

pub struct Lga<T: Element> {
    pub config: LgaConfig,
    pub global: GlobalBranch<T>,
    pub se: SqueezeExcite<T>,
    pub sk: SelectiveFusion<T>,
}

impl<T: Element> Lga<T> {
    /// Builds a layer for `[b, channels, height, width]` features.
    pub fn new(config: LgaConfig, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let global = match config.global {
            GlobalKind::Region => GlobalBranch::Region(RegionAttention::new(config.ra, config.channels, height, width, rng)?),
            GlobalKind::Contextual => GlobalBranch::Contextual,
        };
        Ok(Lga {
            config,
            global,
            se: SqueezeExcite::new(config.channels, config.se_reduction, rng),
            sk: SelectiveFusion::new(config.channels, config.sk_reduction, rng),
        })
    }

    /// `mask` is the full-resolution known-pixel mask `[b, 1, H, W]`; only
    /// the contextual branch reads it.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mask: Option<&NdArray<T>>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Option<RegionMask<T>>)> {
        let (y_global, rm) = match &self.global {
            GlobalBranch::Region(ra) => {
                let (y, rm) = ra.forward(x, mode)?;
                (y, Some(rm))
            }
            GlobalBranch::Contextual => {
                let mask = mask.ok_or_else(|| Error::InvalidArgument("contextual attention needs a mask".into()))?;
                let h = x.shape()[2];
                let factor = mask.shape()[2] / h.max(1);
                let valid = context_mask(mask, factor)?;
                let keep = Tensor::constant(valid.clone());
                let fill = Tensor::constant(valid.map(|v| T::one() - v));
                let cam = cam_forward(x, &valid, CAM_PATCH, CAM_SCALE)?;
                (x.mul(&keep)?.add(&cam.mul(&fill)?)?, None)
            }
        };
        let y_local = self.se.forward(x)?;
        Ok((self.sk.forward(&y_global, &y_local)?.output, rm))
    }
}

impl<T: Element> Module<T> for Lga<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        if let GlobalBranch::Region(ra) = &self.global {
            ra.visit(&join(prefix, "ra"), f);
        }
        self.se.visit(&join(prefix, "se"), f);
        self.sk.visit(&join(prefix, "sk"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::constant(NdArray::randn(shape, 1.0, &mut rng(seed)))
    }

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn saturated_gate_passes_input_through() {
        let se = SqueezeExcite::<f64>::new(8, 4, &mut rng(0));
        se.fc2.bias.as_ref().unwrap().set_value(NdArray::full(&[8], 40.0)).unwrap();
        se.fc2.weight.set_value(NdArray::zeros(&[8, 2])).unwrap();
        let x = randn(&[2, 8, 3, 3], 1);
        assert!(se.forward(&x).unwrap().to_array().max_abs_diff(&x.to_array()) < 1e-12);
        se.fc2.bias.as_ref().unwrap().set_value(NdArray::zeros(&[8])).unwrap();
        let half = x.to_array().map(|v| v / 2.0);
        assert!(se.forward(&x).unwrap().to_array().max_abs_diff(&half) < 1e-15);
    }

    #[test]
    fn se_matches_stage_composition() {
        let se = SqueezeExcite::<f64>::new(8, 4, &mut rng(2));
        for l in [&se.fc1, &se.fc2] {
            let d = l.d_out();
            l.bias.as_ref().unwrap().set_value(NdArray::randn(&[d], 1.0, &mut rng(d as u64))).unwrap();
        }
        let x = randn(&[2, 8, 3, 4], 3);
        let xv = x.to_array();
        let got = se.forward(&x).unwrap().to_array();
        let (w1, b1) = (se.fc1.weight.to_array(), se.fc1.bias.as_ref().unwrap().to_array());
        let (w2, b2) = (se.fc2.weight.to_array(), se.fc2.bias.as_ref().unwrap().to_array());
        for b in 0..2 {
            let s: Vec<f64> = (0..8).map(|c| xv.data()[(b * 8 + c) * 12..][..12].iter().sum::<f64>() / 12.0).collect();
            let z: Vec<f64> =
                (0..2).map(|j| (b1.data()[j] + (0..8).map(|c| w1.get(&[j, c]) * s[c]).sum::<f64>()).max(0.0)).collect();
            for c in 0..8 {
                let g = sigmoid(b2.data()[c] + (0..2).map(|j| w2.get(&[c, j]) * z[j]).sum::<f64>());
                for p in 0..12 {
                    let i = (b * 8 + c) * 12 + p;
                    assert!((got.data()[i] - g * xv.data()[i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn equal_logits_average_the_branches() {
        let sk = SelectiveFusion::<f64>::new(8, 4, &mut rng(4));
        sk.to_local.weight.set_value(sk.to_global.weight.to_array()).unwrap();
        let (yg, yl) = (randn(&[2, 8, 3, 3], 5), randn(&[2, 8, 3, 3], 6));
        let fused = sk.forward(&yg, &yl).unwrap();
        let half = yg.add(&yl).unwrap().to_array().map(|v| v / 2.0);
        assert!(fused.output.to_array().max_abs_diff(&half) < 1e-12);
        assert!(fused.a.to_array().data().iter().all(|&a| (a - 0.5).abs() < 1e-12));
    }

    #[test]
    fn branch_weights_partition_unity() {
        let sk = SelectiveFusion::<f64>::new(12, 4, &mut rng(7));
        let fused = sk.forward(&randn(&[3, 12, 4, 4], 8), &randn(&[3, 12, 4, 4], 9)).unwrap();
        let (a, b) = (fused.a.to_array(), fused.b.to_array());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(*x >= 0.0 && *y >= 0.0 && (x + y - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_selection_keeps_global_branch() {
        let sk = SelectiveFusion::<f64>::new(8, 4, &mut rng(10));
        sk.to_local.weight.set_value(NdArray::zeros(&[8, 2])).unwrap();
        sk.to_local.bias.as_ref().unwrap().set_value(NdArray::full(&[8], -1e4)).unwrap();
        let yg = randn(&[1, 8, 3, 3], 11);
        let yl = Tensor::constant(NdArray::zeros(&[1, 8, 3, 3]));
        let out = sk.forward(&yg, &yl).unwrap().output;
        assert!(out.to_array().max_abs_diff(&yg.to_array()) < 1e-9);
    }

    #[test]
    fn lga_preserves_shape_and_reduces_to_identity() {
        let cfg = LgaConfig::new(16, RaConfig::with_n(4));
        let lga = Lga::<f32>::new(cfg, 32, 32, &mut rng(12)).unwrap();
        let x = Tensor::constant(NdArray::<f32>::randn(&[2, 16, 32, 32], 1.0, &mut rng(13)));
        let (y, rm) = lga.forward(&x, None, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 16, 32, 32]);
        assert_eq!(rm.unwrap().values.shape(), [2, 4, 32, 32]);

        let GlobalBranch::Region(ra) = &lga.global else { unreachable!() };
        ra.dict.d.set_value(NdArray::zeros(&[4, 16])).unwrap();
        lga.se.fc2.weight.set_value(NdArray::zeros(&[16, 4])).unwrap();
        lga.se.fc2.bias.as_ref().unwrap().set_value(NdArray::full(&[16], 30.0)).unwrap();
        let (y, _) = lga.forward(&x, None, Mode::Eval).unwrap();
        assert!(y.to_array().max_abs_diff(&x.to_array()) < 1e-5);
    }

    #[test]
    fn contextual_branch_keeps_known_pixels() {
        let mut cfg = LgaConfig::new(4, RaConfig::with_n(2));
        cfg.global = GlobalKind::Contextual;
        let lga = Lga::<f64>::new(cfg, 8, 8, &mut rng(14)).unwrap();
        assert!(lga.parameters().iter().all(|p| !p.shape().is_empty()));
        let x = randn(&[1, 4, 8, 8], 15);
        let mut mask = NdArray::ones(&[1, 1, 16, 16]);
        for i in 0..64 {
            mask.data_mut()[i] = 0.0;
        }
        let (y, rm) = lga.forward(&x, Some(&mask), Mode::Eval).unwrap();
        assert!(rm.is_none());
        assert_eq!(y.shape(), [1, 4, 8, 8]);
        assert!(lga.forward(&x, None, Mode::Eval).is_err());
    }

    #[test]
    fn rejects_indivisible_channels() {
        assert!(Lga::<f32>::new(LgaConfig::new(6, RaConfig::with_n(2)), 8, 8, &mut rng(0)).is_err());
    }
}
