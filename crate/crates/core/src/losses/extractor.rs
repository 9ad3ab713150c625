use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Checkpoint;
use crate::tensor::{ConvSpec, Element, NdArray, Tensor};
use crate::{Error, Result};

pub const DEFAULT_EXTRACTOR_CHANNELS: [usize; 5] = [8, 16, 32, 32, 32];

pub enum Stage<T: Element> {
    /// Passes its input through unchanged.
    Identity,
    /// 3×3 conv, relu, 2× average pooling, all frozen.
    ConvReluPool { weight: Tensor<T>, bias: Tensor<T>, spec: ConvSpec },
}

/// A fixed stack of feature stages; each stage consumes the previous one's
/// output. Parameters are constants and never receive gradients.
pub struct FeatureExtractor<T: Element> {
    pub stages: Vec<(String, Stage<T>)>,
}

impl<T: Element> FeatureExtractor<T> {
    pub fn identity() -> Self {
        FeatureExtractor { stages: vec![("identity".into(), Stage::Identity)] }
    }

    /// Loads `{prefix}.{i}.weight` / `{prefix}.{i}.bias` for `i = 0, 1, …`
    /// as conv-relu-pool stages, e.g. converted VGG blocks.
    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let mut stages = Vec::new();
        while let Some(w) = ck.tensors.get(&format!("{prefix}.{}.weight", stages.len())) {
            let i = stages.len();
            let [o, c, kh, kw] = w.shape()[..] else {
                return Err(Error::Checkpoint(format!("{prefix}.{i}.weight must be 4-D")));
            };
            if kh != kw || kh % 2 == 0 {
                return Err(Error::Checkpoint(format!("{prefix}.{i}.weight must have an odd square kernel")));
            }
            let bias = match ck.tensors.get(&format!("{prefix}.{i}.bias")) {
                Some(b) => b.cast(),
                None => NdArray::zeros(&[o]),
            };
            let spec = ConvSpec::new(c, o, kh).padding(kh / 2);
            stages.push((
                format!("stage{}", i + 1),
                Stage::ConvReluPool { weight: Tensor::constant(w.cast()), bias: Tensor::constant(bias), spec },
            ));
        }
        if stages.is_empty() {
            return Err(Error::Checkpoint(format!("no extractor stages under `{prefix}`")));
        }
        Ok(FeatureExtractor { stages })
    }

    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for (_, stage) in &self.stages {
            h = match stage {
                Stage::Identity => h,
                Stage::ConvReluPool { weight, bias, spec } => h.conv2d(weight, Some(bias), spec)?.relu().avg_pool2d(2)?,
            };
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// Rows of a Gaussian matrix orthonormalized by Gram-Schmidt, scaled by √2.
fn orthogonal_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m = NdArray::<f64>::randn(&[rows, cols], 1.0, rng).into_data();
    for i in 0..rows {
        for j in 0..i.min(cols) {
            let dot: f64 = (0..cols).map(|k| m[i * cols + k] * m[j * cols + k]).sum();
            for k in 0..cols {
                m[i * cols + k] -= dot * m[j * cols + k];
            }
        }
        let norm = (0..cols).map(|k| m[i * cols + k].powi(2)).sum::<f64>().sqrt().max(1e-12);
        for k in 0..cols {
            m[i * cols + k] /= norm;
        }
    }
    m.iter_mut().for_each(|v| *v *= std::f64::consts::SQRT_2);
    m
}

/// Five conv-relu-pool stages with widths [8, 16, 32, 32, 32] and seeded
/// orthogonal weights, standing in for a pretrained classifier.
pub fn build_default_extractor<T: Element>(seed: u64) -> FeatureExtractor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_in = 3;
    let mut stages = Vec::new();
    for (i, &c_out) in DEFAULT_EXTRACTOR_CHANNELS.iter().enumerate() {
        let spec = ConvSpec::new(c_in, c_out, 3).padding(1);
        let w = orthogonal_rows(c_out, spec.patch_len(), &mut rng);
        let weight = NdArray::new(&spec.weight_shape(), w.into_iter().map(T::from_f64).collect())
            .expect("weight size matches spec");
        stages.push((
            format!("stage{}", i + 1),
            Stage::ConvReluPool { weight: Tensor::constant(weight), bias: Tensor::constant(NdArray::zeros(&[c_out])), spec },
        ));
        c_in = c_out;
    }
    FeatureExtractor { stages }
}
