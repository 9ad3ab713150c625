//! Parameterized layers, optimizers and checkpoint I/O.

mod checkpoint;
mod layers;
mod optim;
mod spectral;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{BatchNorm2d, Conv2d, InstanceNorm2d, Linear};
pub use optim::{zero_grad, Adam, Sgd};
pub use spectral::{spectral_normalize, PowerIteration, SpectralConv2d, SIGMA_FLOOR};

use crate::tensor::{Element, Tensor};

/// Whether layers use batch statistics and update their running state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    /// Learnable, receives gradients.
    Parameter,
    /// Persistent but not learned (running statistics, power-iteration vectors).
    Buffer,
}

/// Anything that owns named tensors.
pub trait Module<T: Element> {
    /// Calls `f` with the dotted path, tensor and kind of every piece of state.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>, StateKind));

    fn parameters(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t, kind| {
            if kind == StateKind::Parameter {
                out.push(t.clone());
            }
        });
        out
    }

    fn named_state(&self) -> Vec<(String, Tensor<T>, StateKind)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t, kind| out.push((name.to_string(), t.clone(), kind)));
        out
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
