use std::cell::Cell;
use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use super::{Element, NdArray};
use crate::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations on the tape.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// What a backward closure sees: the upstream gradient, the forward input and
/// output values, and which inputs actually want a gradient.
pub struct BackwardArgs<'a, T> {
    pub grad: &'a NdArray<T>,
    pub inputs: &'a [&'a NdArray<T>],
    pub output: &'a NdArray<T>,
    pub needs: &'a [bool],
}

type BackwardFn<T> = Box<dyn Fn(BackwardArgs<'_, T>) -> Vec<Option<NdArray<T>>> + Send + Sync>;

struct Node<T> {
    id: usize,
    op: &'static str,
    value: RwLock<NdArray<T>>,
    grad: Mutex<Option<NdArray<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Handle to a node of the dynamic autodiff graph.
///
/// Leaves are either constants or parameters (`requires_grad`). Every
/// operation on tensors that require gradients records a node whose backward
/// closure maps the output gradient to input gradients. The graph is rebuilt
/// on every forward pass and freed once the last handle to it is dropped.
pub struct Tensor<T>(Arc<Node<T>>);

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("op", &self.0.op)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn leaf(value: NdArray<T>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op: "leaf",
            value: RwLock::new(value),
            grad: Mutex::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A leaf that never receives gradients.
    pub fn constant(value: NdArray<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A learnable leaf; gradients accumulate into it until [`zero_grad`](Self::zero_grad).
    pub fn parameter(value: NdArray<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(NdArray::scalar(value))
    }

    /// Records an operation. `backward` returns one optional gradient per
    /// parent, in order; it is only invoked when some parent needs one.
    pub fn from_op<F>(op: &'static str, value: NdArray<T>, parents: &[&Tensor<T>], backward: F) -> Self
    where
        F: Fn(BackwardArgs<'_, T>) -> Vec<Option<NdArray<T>>> + Send + Sync + 'static,
    {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Self::constant(value);
        }
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op,
            value: RwLock::new(value),
            grad: Mutex::new(None),
            requires_grad: true,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn op(&self) -> &'static str {
        self.0.op
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn value(&self) -> RwLockReadGuard<'_, NdArray<T>> {
        self.0.value.read()
    }

    pub fn to_array(&self) -> NdArray<T> {
        self.0.value.read().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.read().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.read().numel()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        let v = self.0.value.read();
        debug_assert_eq!(v.numel(), 1);
        v.data()[0]
    }

    pub fn grad(&self) -> Option<NdArray<T>> {
        self.0.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Replaces a leaf's value in place (optimizer steps, buffers, checkpoint
    /// loading). The shape must not change.
    pub fn set_value(&self, value: NdArray<T>) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::InvalidArgument(format!(
                "cannot overwrite the value of non-leaf `{}`",
                self.0.op
            )));
        }
        let mut slot = self.0.value.write();
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("expected {:?}, got {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    /// Applies `f(value, grad)` to a leaf parameter in place.
    pub fn update(&self, f: impl FnOnce(&mut [T], &[T])) {
        let grad = self.0.grad.lock();
        if let Some(g) = grad.as_ref() {
            let mut v = self.0.value.write();
            f(v.data_mut(), g.data());
        }
    }

    /// A constant copy of the current value, cut from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::constant(self.to_array())
    }

    fn accumulate(&self, g: NdArray<T>) {
        let mut slot = self.0.grad.lock();
        match slot.as_mut() {
            Some(existing) => existing.add_assign(&g),
            None => *slot = Some(g),
        }
    }

    /// Backpropagates from a one-element tensor.
    pub fn backward(&self) -> Result<()> {
        let shape = self.shape();
        if self.numel() != 1 {
            return Err(Error::NonScalar(shape));
        }
        self.backward_with(NdArray::ones(&shape))
    }

    /// Backpropagates an explicit upstream gradient of the same shape.
    pub fn backward_with(&self, seed: NdArray<T>) -> Result<()> {
        if !self.requires_grad() {
            return Err(Error::InvalidArgument(
                "backward called on a tensor that does not require grad".into(),
            ));
        }
        if seed.shape() != self.shape().as_slice() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), self.shape()),
            ));
        }
        let order = self.topo_order();
        self.accumulate(seed);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let grad_slot = node.0.grad.lock();
            let Some(grad) = grad_slot.as_ref() else {
                continue;
            };
            let parents = &node.0.parents;
            let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
            let input_guards: Vec<_> = parents.iter().map(|p| p.0.value.read()).collect();
            let inputs: Vec<&NdArray<T>> = input_guards.iter().map(|g| &**g).collect();
            let output = node.0.value.read();
            let grads = backward(BackwardArgs {
                grad,
                inputs: &inputs,
                output: &output,
                needs: &needs,
            });
            drop(output);
            drop(input_guards);
            drop(grad_slot);
            debug_assert_eq!(grads.len(), parents.len(), "backward of `{}`", node.0.op);
            for ((parent, g), need) in parents.iter().zip(grads).zip(needs) {
                if let (true, Some(g)) = (need, g) {
                    debug_assert_eq!(
                        g.shape(),
                        parent.shape().as_slice(),
                        "gradient shape from `{}`",
                        node.0.op
                    );
                    parent.accumulate(g);
                }
            }
        }
        Ok(())
    }

    /// Post-order over the requires-grad subgraph: parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut visited = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_do_not_record() {
        let a = Tensor::<f64>::constant(NdArray::ones(&[2]));
        let b = a.add(&a).unwrap();
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
        assert!(b.backward().is_err());
    }

    #[test]
    fn no_grad_suppresses_tape() {
        let p = Tensor::<f64>::parameter(NdArray::ones(&[3]));
        let y = no_grad(|| p.mul(&p).unwrap());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = sum(x*x + x) -> dy/dx = 2x + 1
        let x = Tensor::<f64>::parameter(NdArray::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn leaf_grads_accumulate_across_passes() {
        let x = Tensor::<f64>::parameter(NdArray::ones(&[2]));
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let x = Tensor::<f64>::parameter(NdArray::ones(&[2]));
        assert!(matches!(x.backward(), Err(Error::NonScalar(_))));
    }
}
