use crate::tensor::broadcast::{broadcast_shape, broadcast_strides, for_each2};
use crate::tensor::{flops, lit, Element, NdArray, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }

    /// Partial derivatives with respect to both operands.
    #[inline]
    fn partials<T: Element>(self, a: T, b: T) -> (T, T) {
        match self {
            Binary::Add => (T::one(), T::one()),
            Binary::Sub => (T::one(), -T::one()),
            Binary::Mul => (b, a),
            Binary::Div => (T::one() / b, -a / (b * b)),
        }
    }
}

fn binary<T: Element>(kind: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (value, out_shape, sa, sb) = {
        let av = a.value();
        let bv = b.value();
        let out_shape = broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
            Error::shape(
                kind.name(),
                format!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape()),
            )
        })?;
        let sa = broadcast_strides(av.shape(), &out_shape);
        let sb = broadcast_strides(bv.shape(), &out_shape);
        let mut out = NdArray::zeros(&out_shape);
        let (x, y) = (av.data(), bv.data());
        if av.shape() == bv.shape() {
            for ((o, &p), &q) in out.data_mut().iter_mut().zip(x).zip(y) {
                *o = kind.apply(p, q);
            }
        } else {
            let od = out.data_mut();
            for_each2(&out_shape, &sa, &sb, |o, i, j| od[o] = kind.apply(x[i], y[j]));
        }
        (out, out_shape, sa, sb)
    };
    flops::record(value.numel() as u64);
    Ok(Tensor::from_op(kind.name(), value, &[a, b], move |args| {
        let (x, y) = (args.inputs[0], args.inputs[1]);
        let g = args.grad.data();
        let mut ga = args.needs[0].then(|| NdArray::zeros(x.shape()));
        let mut gb = args.needs[1].then(|| NdArray::zeros(y.shape()));
        {
            let (xd, yd) = (x.data(), y.data());
            let mut gad = ga.as_mut().map(|t| t.data_mut());
            let mut gbd = gb.as_mut().map(|t| t.data_mut());
            for_each2(&out_shape, &sa, &sb, |o, i, j| {
                let (da, db) = kind.partials(xd[i], yd[j]);
                if let Some(ga) = gad.as_deref_mut() {
                    ga[i] += g[o] * da;
                }
                if let Some(gb) = gbd.as_deref_mut() {
                    gb[j] += g[o] * db;
                }
            });
        }
        vec![ga, gb]
    }))
}

fn unary<T: Element>(
    name: &'static str,
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let value = x.value().map(f);
    flops::record(value.numel() as u64);
    Tensor::from_op(name, value, &[x], move |args| {
        let x = args.inputs[0].data();
        let y = args.output.data();
        let g = args.grad.data();
        let data = x
            .iter()
            .zip(y)
            .zip(g)
            .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
            .collect();
        vec![Some(NdArray::new(args.inputs[0].shape(), data).expect("same shape"))]
    })
}

impl<T: Element> Tensor<T> {
    /// Broadcasting addition.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Div, self, other)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = lit::<T>(c);
        unary("add_scalar", self, move |v| v + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<T> {
        let c = lit::<T>(c);
        unary("mul_scalar", self, move |v| v * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary("neg", self, |v| -v, |_, _| -T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            "relu",
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = lit::<T>(slope);
        unary(
            "leaky_relu",
            self,
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            "sigmoid",
            self,
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary("tanh", self, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary("exp", self, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary("ln", self, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary("sqrt", self, |v| v.sqrt(), |_, y| lit::<T>(0.5) / y)
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Tensor<T> {
        unary("abs", self, |v| v.abs(), |x, _| x.signum0())
    }

    pub fn square(&self) -> Tensor<T> {
        unary("square", self, |v| v * v, |x, _| lit::<T>(2.0) * x)
    }
}
