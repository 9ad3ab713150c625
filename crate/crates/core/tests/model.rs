use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regionpaint_core::net::{Discriminator, Generator, GeneratorConfig, LgaPlacement};
use regionpaint_core::nn::{Checkpoint, Mode, Module, PowerIteration, SpectralConv2d};
use regionpaint_core::region::{RaConfig, RegionAttention};
use regionpaint_core::{ConvSpec, NdArray, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn top_singular_value(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().max()
}

#[test]
fn power_iteration_matches_svd_on_square_matrices() {
    for seed in 0..40 {
        let w = NdArray::<f64>::randn(&[64, 64], 1.0, &mut rng(seed));
        let state = PowerIteration::<f64>::new(&[64, 64], &mut rng(seed + 100)).unwrap();
        let (est, _) = state.converge(&w, 1e-7, 20_000).unwrap();
        let exact = top_singular_value(64, 64, w.data());
        assert!((est - exact).abs() <= 1e-3, "seed {seed}: {est} vs {exact}");
    }
}

#[test]
fn spectral_conv_weights_are_contractive_after_warm_up() {
    let conv = SpectralConv2d::<f64>::new(ConvSpec::new(8, 16, 5).padding(2), true, &mut rng(3)).unwrap();
    let w = conv.normalized_weight().unwrap();
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert!(top_singular_value(rows, cols, w.data()) <= 1.01);
}

#[test]
fn zero_dictionary_gives_exact_identity_at_f32() {
    let ra = RegionAttention::<f32>::new(RaConfig::with_n(8), 6, 16, 16, &mut rng(4)).unwrap();
    ra.dict.d.set_value(NdArray::zeros(&[8, 6])).unwrap();
    let x = NdArray::<f32>::randn(&[2, 6, 16, 16], 3.0, &mut rng(5));
    for mode in [Mode::Train, Mode::Eval] {
        let (y, _) = ra.forward(&Tensor::constant(x.clone()), mode).unwrap();
        assert_eq!(y.to_array().data(), x.data());
    }
}

fn toy_config(place: LgaPlacement) -> GeneratorConfig {
    GeneratorConfig { base_channels: 8, image_size: 32, lga_placement: place, n_regions: 4, ..Default::default() }
}

#[test]
fn checkpoint_round_trip_restores_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    let cfg = toy_config(LgaPlacement::Decoder);
    let g = Generator::<f32>::new(cfg.clone(), &mut rng(6)).unwrap();
    let d = Discriminator::<f32>::new(4, &mut rng(7)).unwrap();
    let mut ck = Checkpoint::new(serde_json::to_value(&cfg).unwrap());
    ck.insert_module("generator", &g);
    ck.insert_module("discriminator", &d);
    ck.save(&path).unwrap();

    let back = Checkpoint::load(&path).unwrap();
    let cfg2: GeneratorConfig = serde_json::from_value(back.metadata.clone()).unwrap();
    assert_eq!(cfg2, cfg);
    let g2 = Generator::<f32>::new(cfg2, &mut rng(99)).unwrap();
    let d2 = Discriminator::<f32>::new(4, &mut rng(98)).unwrap();
    back.load_module("generator", &g2).unwrap();
    back.load_module("discriminator", &d2).unwrap();
    for ((n1, t1, _), (n2, t2, _)) in g.named_state().into_iter().zip(g2.named_state()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.to_array().data(), t2.to_array().data(), "{n1}");
    }

    let img = Tensor::constant(NdArray::<f32>::uniform(&[1, 3, 32, 32], -1.0, 1.0, &mut rng(8)));
    let mask = Tensor::constant(NdArray::from_fn(&[1, 1, 32, 32], |i| if i % 32 < 10 { 0.0 } else { 1.0 }));
    let a = g.forward(&img, &mask, Mode::Eval).unwrap().image.to_array();
    let b = g2.forward(&img, &mask, Mode::Eval).unwrap().image.to_array();
    assert_eq!(a.data(), b.data());
}

#[test]
fn loading_into_a_different_architecture_fails() {
    let g = Generator::<f32>::new(toy_config(LgaPlacement::Encoder), &mut rng(9)).unwrap();
    let mut ck = Checkpoint::new(serde_json::Value::Null);
    ck.insert_module("generator", &g);
    let other = Generator::<f32>::new(toy_config(LgaPlacement::Decoder), &mut rng(10)).unwrap();
    assert!(ck.load_module("generator", &other).is_err());
}

#[test]
fn incompatible_image_sizes_are_rejected_at_build_time() {
    for (size, place) in [(36, LgaPlacement::Encoder), (20, LgaPlacement::Decoder), (30, LgaPlacement::None)] {
        let cfg = GeneratorConfig { image_size: size, ..toy_config(place) };
        assert!(Generator::<f32>::new(cfg, &mut rng(11)).is_err(), "size {size}");
    }
}
