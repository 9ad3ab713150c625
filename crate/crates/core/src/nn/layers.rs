use rand::Rng;

use super::{join, Mode, Module, StateKind};
use crate::tensor::{lit, ConvSpec, Element, NdArray, Tensor};
use crate::Result;

pub const BN_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

pub struct Conv2d<T: Element> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> Conv2d<T> {
    /// He-normal weights, zero bias.
    pub fn new(spec: ConvSpec, bias: bool, rng: &mut impl Rng) -> Self {
        let std = (2.0 / spec.patch_len() as f64).sqrt();
        Self::with_std(spec, bias, std, rng)
    }

    pub fn with_std(spec: ConvSpec, bias: bool, std: f64, rng: &mut impl Rng) -> Self {
        Conv2d {
            spec,
            weight: Tensor::parameter(NdArray::randn(&spec.weight_shape(), std, rng)),
            bias: bias.then(|| Tensor::parameter(NdArray::zeros(&[spec.out_channels]))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, self.bias.as_ref(), &self.spec)
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        f(&join(prefix, "weight"), &self.weight, StateKind::Parameter);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, StateKind::Parameter);
        }
    }
}

pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    /// LeCun-normal weights, zero bias.
    pub fn new(d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let std = (1.0 / d_in as f64).sqrt();
        Linear {
            weight: Tensor::parameter(NdArray::randn(&[d_out, d_in], std, rng)),
            bias: bias.then(|| Tensor::parameter(NdArray::zeros(&[d_out]))),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        f(&join(prefix, "weight"), &self.weight, StateKind::Parameter);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, StateKind::Parameter);
        }
    }
}

/// Batch normalization with running statistics (momentum 0.1, eps 1e-5).
pub struct BatchNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::parameter(NdArray::ones(&[channels])),
            beta: Tensor::parameter(NdArray::zeros(&[channels])),
            running_mean: Tensor::constant(NdArray::zeros(&[channels])),
            running_var: Tensor::constant(NdArray::ones(&[channels])),
            momentum: BN_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm(&self.gamma, &self.beta, self.eps)?;
                let m = lit::<T>(self.momentum);
                let keep = T::one() - m;
                let unbias = lit::<T>(stats.count as f64 / (stats.count - 1) as f64);
                let rm = self.running_mean.to_array().into_data();
                let rv = self.running_var.to_array().into_data();
                let shape = [rm.len()];
                let new_mean: Vec<T> = rm.iter().zip(&stats.mean).map(|(&r, &b)| keep * r + m * b).collect();
                let new_var: Vec<T> =
                    rv.iter().zip(&stats.var).map(|(&r, &b)| keep * r + m * b * unbias).collect();
                self.running_mean.set_value(NdArray::new(&shape, new_mean)?)?;
                self.running_var.set_value(NdArray::new(&shape, new_var)?)?;
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.running_mean.to_array().into_data();
                let var = self.running_var.to_array().into_data();
                x.batch_norm_frozen(&mean, &var, &self.gamma, &self.beta, self.eps)
            }
        }
    }
}

impl<T: Element> Module<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        f(&join(prefix, "weight"), &self.gamma, StateKind::Parameter);
        f(&join(prefix, "bias"), &self.beta, StateKind::Parameter);
        f(&join(prefix, "running_mean"), &self.running_mean, StateKind::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, StateKind::Buffer);
    }
}

/// Affine instance normalization; identical in train and eval.
pub struct InstanceNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Element> InstanceNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Tensor::parameter(NdArray::ones(&[channels])),
            beta: Tensor::parameter(NdArray::zeros(&[channels])),
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.instance_norm(&self.gamma, &self.beta, self.eps)
    }
}

impl<T: Element> Module<T> for InstanceNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind)) {
        f(&join(prefix, "weight"), &self.gamma, StateKind::Parameter);
        f(&join(prefix, "bias"), &self.beta, StateKind::Parameter);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn running_stats_follow_momentum() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::constant(NdArray::new(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        bn.forward(&x, Mode::Train).unwrap();
        // batch mean 3, unbiased var 14/3
        let rm = bn.running_mean.value().data()[0];
        let rv = bn.running_var.value().data()[0];
        assert!((rm - 0.3).abs() < 1e-12);
        assert!((rv - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean.set_value(NdArray::full(&[1], 2.0)).unwrap();
        bn.running_var.set_value(NdArray::full(&[1], 4.0 - 1e-5)).unwrap();
        let x = Tensor::constant(NdArray::full(&[1, 1, 1, 1], 6.0));
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!((y.item() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn names_are_dotted_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::<f32>::new(ConvSpec::new(2, 3, 3), true, &mut rng);
        let names: Vec<String> = conv.named_state().into_iter().map(|(n, ..)| n).collect();
        assert_eq!(names, ["weight", "bias"]);
        let bn = BatchNorm2d::<f32>::new(3);
        let mut seen = Vec::new();
        bn.visit("rmg.bn", &mut |n, _, k| seen.push((n.to_string(), k)));
        assert_eq!(seen[2], ("rmg.bn.running_mean".to_string(), StateKind::Buffer));
        assert_eq!(bn.parameters().len(), 2);
    }
}
