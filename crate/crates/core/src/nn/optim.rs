use crate::tensor::{lit, Element, Tensor};

pub fn zero_grad<T: Element>(params: &[Tensor<T>]) {
    params.iter().for_each(|p| p.zero_grad());
}

/// Plain gradient descent.
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<T: Element>(&self, params: &[Tensor<T>]) {
        let lr = lit::<T>(self.lr);
        for p in params {
            p.update(|v, g| v.iter_mut().zip(g).for_each(|(v, &g)| *v = *v - lr * g));
        }
    }
}

pub struct Adam<T: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(lr: f64, betas: (f64, f64)) -> Self {
        Adam { lr, beta1: betas.0, beta2: betas.1, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update. `params` must be passed in the same order
    /// every call; tensors without a gradient are left untouched.
    pub fn step(&mut self, params: &[Tensor<T>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = lit::<T>(self.lr / c1);
        let c2_sqrt = lit::<T>(c2.sqrt());
        let (b1t, b2t) = (lit::<T>(b1), lit::<T>(b2));
        let (one, eps) = (T::one(), lit::<T>(self.eps));
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            p.update(|vals, g| {
                for (((x, &g), m), v) in vals.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1t * *m + (one - b1t) * g;
                    *v = b2t * *v + (one - b2t) * g * g;
                    *x = *x - step * *m / ((*v).sqrt() / c2_sqrt + eps);
                }
            });
        }
    }
}
