//! Seeded gradient-check scenarios covering every differentiable operation
//! and the composed attention, fusion, generator and loss pipelines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckOptions, GradCheckReport};
use crate::lga::{Lga, LgaConfig, SelectiveFusion, SqueezeExcite};
use crate::losses::{build_default_extractor, l1_loss, perceptual_loss, rals_adversarial, style_loss, Side};
use crate::net::{Generator, GeneratorConfig, LgaPlacement};
use crate::nn::{spectral_normalize, Mode, Module, PowerIteration};
use crate::region::{cam_forward, RaConfig, RegionAttention};
use crate::tensor::{ConvSpec, NdArray, Tensor};
use crate::Result;

/// A scalar function together with the leaves to check it against.
pub struct Scenario {
    pub inputs: Vec<Tensor<f64>>,
    pub f: Box<dyn FnMut() -> Result<Tensor<f64>>>,
    pub opts: GradCheckOptions,
}

pub struct Case {
    pub name: &'static str,
    build: fn(&mut Ctx) -> Result<Scenario>,
}

impl Case {
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let mut ctx = Ctx { rng: ChaCha8Rng::seed_from_u64(seed), seed };
        (self.build)(&mut ctx)
    }

    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        let mut s = self.scenario(seed)?;
        grad_check(&mut s.f, &s.inputs, &s.opts)
    }
}

struct Ctx {
    rng: ChaCha8Rng,
    seed: u64,
}

impl Ctx {
    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    fn array(&mut self, shape: &[usize]) -> NdArray<f64> {
        NdArray::randn(shape, 1.0, &mut self.rng)
    }

    fn p(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::parameter(self.array(shape))
    }

    /// Entries kept at least 0.05 away from zero, clear of kinks.
    fn p_away(&mut self, shape: &[usize]) -> Tensor<f64> {
        let a = self.array(shape).map(|v| if v.abs() < 0.05 { 0.05f64.copysign(v) + v } else { v });
        Tensor::parameter(a)
    }

    fn p_pos(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::parameter(NdArray::uniform(shape, 0.5, 2.0, &mut self.rng))
    }

    fn c(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::constant(self.array(shape))
    }

    fn sub_rng(&mut self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng.random())
    }

    /// Random-weighted sum, so every output element gets a distinct upstream
    /// gradient.
    fn scenario(
        &mut self,
        inputs: Vec<Tensor<f64>>,
        out_shape: &[usize],
        f: impl Fn() -> Result<Tensor<f64>> + 'static,
    ) -> Scenario {
        let r = self.c(out_shape);
        Scenario {
            inputs,
            f: Box::new(move || Ok(f()?.mul(&r)?.sum())),
            opts: GradCheckOptions { seed: self.seed, ..GradCheckOptions::default() },
        }
    }
}

macro_rules! unary {
    ($name:literal, $make:ident, $body:expr) => {
        Case {
            name: $name,
            build: |cx| {
                let shape = [cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4)];
                let x = cx.$make(&shape);
                let xc = x.clone();
                let f: fn(&Tensor<f64>) -> Result<Tensor<f64>> = $body;
                Ok(cx.scenario(vec![x], &shape, move || f(&xc)))
            },
        }
    };
}

fn elementwise_cases() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            build: |cx| {
                let (b, m, n) = (cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4));
                let (x, y) = (cx.p(&[b, m, n]), cx.p(&[m, 1]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[b, m, n], move || xc.add(&yc)))
            },
        },
        Case {
            name: "sub",
            build: |cx| {
                let (m, n) = (cx.dim(1, 4), cx.dim(1, 4));
                let (x, y) = (cx.p(&[m, n]), cx.p(&[m, n]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[m, n], move || xc.sub(&yc)))
            },
        },
        Case {
            name: "mul",
            build: |cx| {
                let (b, m, n) = (cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4));
                let (x, y) = (cx.p(&[b, m, n]), cx.p(&[n]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[b, m, n], move || xc.mul(&yc)))
            },
        },
        Case {
            name: "div",
            build: |cx| {
                let (m, n) = (cx.dim(1, 4), cx.dim(1, 4));
                let (x, y) = (cx.p(&[m, n]), cx.p_pos(&[m, n]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[m, n], move || xc.div(&yc)))
            },
        },
        unary!("scalar_ops", p, |x| Ok(x.add_scalar(0.3).mul_scalar(-1.7).neg())),
        unary!("relu", p_away, |x| Ok(x.relu())),
        unary!("leaky_relu", p_away, |x| Ok(x.leaky_relu(0.2))),
        unary!("sigmoid", p, |x| Ok(x.sigmoid())),
        unary!("tanh", p, |x| Ok(x.tanh())),
        unary!("exp", p, |x| Ok(x.exp())),
        unary!("ln", p_pos, |x| Ok(x.ln())),
        unary!("sqrt", p_pos, |x| Ok(x.sqrt())),
        unary!("abs", p_away, |x| Ok(x.abs())),
        unary!("square", p, |x| Ok(x.square())),
    ]
}

fn reduction_and_shape_cases() -> Vec<Case> {
    vec![
        Case {
            name: "sum_mean",
            build: |cx| {
                let shape = [cx.dim(1, 3), cx.dim(1, 4)];
                let x = cx.p(&shape);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[], move || Ok(xc.sum().mul_scalar(0.7).add(&xc.square().mean())?)))
            },
        },
        Case {
            name: "sum_axes",
            build: |cx| {
                let (a, b, c) = (cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4));
                let x = cx.p(&[a, b, c]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[1, b, 1], move || xc.sum_axes(&[0, 2])))
            },
        },
        Case {
            name: "global_avg_pool",
            build: |cx| {
                let (b, c) = (cx.dim(1, 2), cx.dim(1, 3));
                let (h, w) = (cx.dim(1, 4), cx.dim(1, 4));
                let x = cx.p(&[b, c, h, w]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[b, c, 1, 1], move || xc.global_avg_pool()))
            },
        },
        Case {
            name: "reshape_permute",
            build: |cx| {
                let (a, b, c) = (cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4));
                let x = cx.p(&[a, b, c]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[c, b * a], move || xc.permute(&[2, 1, 0])?.reshape(&[c, b * a])))
            },
        },
        Case {
            name: "concat",
            build: |cx| {
                let (a, b, k, c) = (cx.dim(1, 3), cx.dim(1, 3), cx.dim(1, 3), cx.dim(1, 4));
                let (x, y) = (cx.p(&[a, b, c]), cx.p(&[a, k, c]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[a, b + k, c], move || Tensor::concat(&[&xc, &yc], 1)))
            },
        },
        Case {
            name: "narrow",
            build: |cx| {
                let (a, b) = (cx.dim(1, 3), cx.dim(2, 5));
                let x = cx.p(&[a, b]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[a, b - 1], move || xc.narrow(1, 1, b - 1)))
            },
        },
    ]
}

fn linalg_cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            build: |cx| {
                let (b, m, k, n) = (cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4), cx.dim(1, 4));
                let (x, y) = (cx.p(&[b, m, k]), cx.p(&[k, n]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[b, m, n], move || xc.matmul(&yc)))
            },
        },
        Case {
            name: "matmul_shared_left",
            build: |cx| {
                let (b, m, k, n) = (cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4), cx.dim(1, 4));
                let (x, y) = (cx.p(&[m, k]), cx.p(&[b, k, n]));
                let (xc, yc) = (x.clone(), y.clone());
                Ok(cx.scenario(vec![x, y], &[b, m, n], move || xc.matmul(&yc)))
            },
        },
        Case {
            name: "linear",
            build: |cx| {
                let (a, r, din, dout) = (cx.dim(1, 2), cx.dim(1, 3), cx.dim(1, 5), cx.dim(1, 4));
                let (x, w, b) = (cx.p(&[a, r, din]), cx.p(&[dout, din]), cx.p(&[dout]));
                let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
                Ok(cx.scenario(vec![x, w, b], &[a, r, dout], move || xc.linear(&wc, Some(&bc))))
            },
        },
        Case {
            name: "gram_matrix",
            build: |cx| {
                let (b, c) = (cx.dim(1, 2), cx.dim(1, 4));
                let (h, w) = (cx.dim(1, 4), cx.dim(1, 4));
                let x = cx.p(&[b, c, h, w]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[b, c, c], move || xc.gram_matrix()))
            },
        },
        Case {
            name: "conv2d",
            build: |cx| {
                let (ci, co) = (cx.dim(1, 3), cx.dim(1, 3));
                let k = [1, 3, 5][cx.dim(0, 2)];
                let spec = ConvSpec::new(ci, co, k).stride(cx.dim(1, 2)).dilation(cx.dim(1, 2)).padding(cx.dim(0, 2));
                let (h, w) = (cx.dim(9, 11), cx.dim(9, 11));
                let (oh, ow) = spec.output_size(h, w)?;
                let (x, wt, b) = (cx.p(&[2, ci, h, w]), cx.p(&spec.weight_shape()), cx.p(&[co]));
                let (xc, wc, bc) = (x.clone(), wt.clone(), b.clone());
                Ok(cx.scenario(vec![x, wt, b], &[2, co, oh, ow], move || xc.conv2d(&wc, Some(&bc), &spec)))
            },
        },
        Case {
            name: "avg_pool2d",
            build: |cx| {
                let f = cx.dim(1, 3);
                let (b, c, h, w) = (cx.dim(1, 2), cx.dim(1, 3), f * cx.dim(1, 3), f * cx.dim(1, 3));
                let x = cx.p(&[b, c, h, w]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[b, c, h / f, w / f], move || xc.avg_pool2d(f)))
            },
        },
        Case {
            name: "upsample_bilinear",
            build: |cx| {
                let f = cx.dim(2, 4);
                let (b, c, h, w) = (cx.dim(1, 2), cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4));
                let x = cx.p(&[b, c, h, w]);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[b, c, h * f, w * f], move || xc.upsample_bilinear(f)))
            },
        },
        Case {
            name: "softmax",
            build: |cx| {
                let shape = [cx.dim(1, 3), cx.dim(2, 5), cx.dim(1, 3)];
                let axis = cx.dim(0, 2);
                let x = cx.p(&shape);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &shape, move || xc.softmax(axis)))
            },
        },
        Case {
            name: "softmax_over_channels",
            build: |cx| {
                let shape = [cx.dim(1, 2), cx.dim(2, 6), cx.dim(1, 4), cx.dim(1, 4)];
                let x = cx.p(&shape);
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &shape, move || xc.softmax_over_channels()))
            },
        },
    ]
}

fn norm_cases() -> Vec<Case> {
    vec![
        Case {
            name: "batch_norm",
            build: |cx| {
                let shape = [cx.dim(1, 3), cx.dim(1, 3), cx.dim(2, 4), cx.dim(2, 4)];
                let c = shape[1];
                let (x, g, b) = (cx.p(&shape), cx.p(&[c]), cx.p(&[c]));
                let (xc, gc, bc) = (x.clone(), g.clone(), b.clone());
                Ok(cx.scenario(vec![x, g, b], &shape, move || Ok(xc.batch_norm(&gc, &bc, 1e-5)?.0)))
            },
        },
        Case {
            name: "instance_norm",
            build: |cx| {
                let shape = [cx.dim(1, 3), cx.dim(1, 3), cx.dim(2, 4), cx.dim(2, 4)];
                let c = shape[1];
                let (x, g, b) = (cx.p(&shape), cx.p(&[c]), cx.p(&[c]));
                let (xc, gc, bc) = (x.clone(), g.clone(), b.clone());
                Ok(cx.scenario(vec![x, g, b], &shape, move || xc.instance_norm(&gc, &bc, 1e-5)))
            },
        },
        Case {
            name: "batch_norm_frozen",
            build: |cx| {
                let shape = [cx.dim(1, 3), cx.dim(1, 3), cx.dim(1, 4), cx.dim(1, 4)];
                let c = shape[1];
                let mean = cx.array(&[c]).into_data();
                let var = NdArray::uniform(&[c], 0.5, 2.0, &mut cx.rng).into_data();
                let (x, g, b) = (cx.p(&shape), cx.p(&[c]), cx.p(&[c]));
                let (xc, gc, bc) = (x.clone(), g.clone(), b.clone());
                Ok(cx.scenario(vec![x, g, b], &shape, move || xc.batch_norm_frozen(&mean, &var, &gc, &bc, 1e-5)))
            },
        },
        Case {
            name: "spectral_normalize",
            build: |cx| {
                let shape = [cx.dim(2, 4), cx.dim(1, 3), 3, 3];
                let w = cx.p(&shape);
                let power = PowerIteration::new(&shape, &mut cx.rng)?;
                power.step(&w.value(), 20)?;
                let wc = w.clone();
                Ok(cx.scenario(vec![w], &shape, move || Ok(spectral_normalize(&wc, &power, 0)?.0)))
            },
        },
    ]
}

fn model_cases() -> Vec<Case> {
    vec![
        Case {
            name: "conv_linear_softmax_chain",
            build: |cx| {
                let spec = ConvSpec::new(2, 3, 3).padding(1);
                let (x, wt, lw) = (cx.p(&[2, 2, 4, 4]), cx.p(&spec.weight_shape()), cx.p(&[5, 4]));
                let (xc, wc, lc) = (x.clone(), wt.clone(), lw.clone());
                Ok(cx.scenario(vec![x, wt, lw], &[2, 3, 4, 5], move || {
                    xc.conv2d(&wc, None, &spec)?.linear(&lc, None)?.softmax(3)
                }))
            },
        },
        Case {
            name: "cam_forward",
            build: |cx| {
                let (c, h, w) = (cx.dim(1, 3), cx.dim(3, 6), cx.dim(3, 6));
                let x = cx.p(&[2, c, h, w]);
                let valid = NdArray::from_fn(&[2, 1, h, w], |i| if i % 5 == 2 { 0.0 } else { 1.0 });
                let xc = x.clone();
                Ok(cx.scenario(vec![x], &[2, c, h, w], move || cam_forward(&xc, &valid, 3, 10.0)))
            },
        },
        Case {
            name: "ra_forward",
            build: |cx| {
                let (c, n) = (cx.dim(1, 4), cx.dim(2, 5));
                let (h, w) = (4 * cx.dim(1, 2), 4 * cx.dim(1, 2));
                let ra = RegionAttention::<f64>::new(RaConfig::with_n(n), c, h, w, &mut cx.sub_rng())?;
                ra.dict.d.set_value(cx.array(&[n, c]))?;
                let x = cx.p(&[2, c, h, w]);
                let mut inputs = vec![x.clone()];
                inputs.extend(ra.parameters());
                Ok(cx.scenario(inputs, &[2, c, h, w], move || Ok(ra.forward(&x, Mode::Train)?.0)))
            },
        },
        Case {
            name: "se_forward",
            build: |cx| {
                let c = 4 * cx.dim(1, 2);
                let se = SqueezeExcite::<f64>::new(c, 4, &mut cx.sub_rng());
                let x = cx.p(&[2, c, 3, 3]);
                let mut inputs = vec![x.clone()];
                inputs.extend(se.parameters());
                Ok(cx.scenario(inputs, &[2, c, 3, 3], move || se.forward(&x)))
            },
        },
        Case {
            name: "sk_fuse",
            build: |cx| {
                let c = 4 * cx.dim(1, 2);
                let sk = SelectiveFusion::<f64>::new(c, 4, &mut cx.sub_rng());
                let (yg, yl) = (cx.p(&[2, c, 3, 3]), cx.p(&[2, c, 3, 3]));
                let mut inputs = vec![yg.clone(), yl.clone()];
                inputs.extend(sk.parameters());
                Ok(cx.scenario(inputs, &[2, c, 3, 3], move || Ok(sk.forward(&yg, &yl)?.output)))
            },
        },
        Case {
            name: "lga_forward",
            build: |cx| {
                let c = 4 * cx.dim(1, 2);
                let cfg = LgaConfig::new(c, RaConfig::with_n(cx.dim(2, 4)));
                let lga = Lga::<f64>::new(cfg, 8, 8, &mut cx.sub_rng())?;
                let x = cx.p(&[2, c, 8, 8]);
                let mut inputs = vec![x.clone()];
                inputs.extend(lga.parameters());
                let mut s = cx.scenario(inputs, &[2, c, 8, 8], move || Ok(lga.forward(&x, None, Mode::Train)?.0));
                s.opts.max_coords = Some(40);
                Ok(s)
            },
        },
        Case {
            name: "generator_forward",
            build: |cx| {
                let cfg = GeneratorConfig {
                    base_channels: 8,
                    image_size: 32,
                    lga_placement: LgaPlacement::Encoder,
                    n_regions: 4,
                    ..GeneratorConfig::default()
                };
                let g = Generator::<f64>::new(cfg, &mut cx.sub_rng())?;
                let img = cx.p(&[1, 3, 32, 32]);
                let mask = Tensor::constant(NdArray::from_fn(&[1, 1, 32, 32], |i| if (i % 32) < 12 { 0.0 } else { 1.0 }));
                let mut inputs = vec![img.clone()];
                inputs.extend(generator_leaves(&g));
                let mut s = cx.scenario(inputs, &[1, 3, 32, 32], move || Ok(g.forward(&img, &mask, Mode::Train)?.image));
                s.opts.max_coords = Some(12);
                Ok(s)
            },
        },
    ]
}

/// One representative tensor from every stage of the generator.
fn generator_leaves(g: &Generator<f64>) -> Vec<Tensor<f64>> {
    let mut leaves = vec![g.encoder[0].conv.weight.clone(), g.blocks[0].c1.weight.clone(), g.to_rgb.weight.clone()];
    if let Some(l) = g.lga.first() {
        let names = ["ra.proj.weight", "ra.rmg.shared_linear.weight", "ra.dict", "se.fc1.weight", "sk.to_local.weight"];
        for (name, t, _) in l.named_state() {
            if names.contains(&name.as_str()) {
                leaves.push(t);
            }
        }
    }
    leaves
}

fn loss_cases() -> Vec<Case> {
    vec![
        Case {
            name: "l1_loss",
            build: |cx| {
                let shape = [cx.dim(1, 2), 3, cx.dim(2, 5), cx.dim(2, 5)];
                let (p, g) = (cx.p(&shape), cx.c(&shape));
                let pc = p.clone();
                Ok(cx.scenario(vec![p], &[], move || l1_loss(&pc, &g)))
            },
        },
        Case {
            name: "perceptual_loss",
            build: |cx| {
                let fx = build_default_extractor::<f64>(cx.seed);
                let (p, g) = (cx.p(&[1, 3, 32, 32]), cx.c(&[1, 3, 32, 32]));
                let pc = p.clone();
                let mut s = cx.scenario(vec![p], &[], move || perceptual_loss(&pc, &g, &fx));
                s.opts.max_coords = Some(64);
                Ok(s)
            },
        },
        Case {
            name: "style_loss",
            build: |cx| {
                let fx = build_default_extractor::<f64>(cx.seed);
                let (p, g) = (cx.p(&[1, 3, 32, 32]), cx.c(&[1, 3, 32, 32]));
                let pc = p.clone();
                let mut s = cx.scenario(vec![p], &[], move || style_loss(&pc, &g, &fx));
                s.opts.max_coords = Some(64);
                Ok(s)
            },
        },
        Case {
            name: "rals_adversarial",
            build: |cx| {
                let shape = [cx.dim(1, 3), 1, cx.dim(1, 3), cx.dim(1, 3)];
                let (r, f) = (cx.p(&shape), cx.p(&shape));
                let (rc, fc) = (r.clone(), f.clone());
                Ok(cx.scenario(vec![r, f], &[], move || {
                    rals_adversarial(&rc, &fc, Side::Generator)?.add(&rals_adversarial(&rc, &fc, Side::Discriminator)?.mul_scalar(0.5))
                }))
            },
        },
    ]
}

/// Every scenario, cheapest first.
pub fn standard_cases() -> Vec<Case> {
    let mut all = elementwise_cases();
    all.extend(reduction_and_shape_cases());
    all.extend(linalg_cases());
    all.extend(norm_cases());
    all.extend(loss_cases());
    all.extend(model_cases());
    all
}
