use super::*;
use crate::tensor::flops;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::constant(NdArray::randn(shape, 1.0, &mut rng(seed)))
}

fn naive_conv(x: &NdArray<f64>, wt: &NdArray<f64>, bias: &NdArray<f64>, pad: usize) -> NdArray<f64> {
    let [b, c, h, w] = x.shape()[..] else { unreachable!() };
    let [o, _, k, _] = wt.shape()[..] else { unreachable!() };
    NdArray::from_fn(&[b, o, h, w], |idx| {
        let (bi, oc, y, xx) = (idx / (o * h * w), idx / (h * w) % o, idx / w % h, idx % w);
        let mut s = bias.data()[oc];
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (y + ky) as isize - pad as isize;
                    let ix = (xx + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        s += x.get(&[bi, ic, iy as usize, ix as usize]) * wt.get(&[oc, ic, ky, kx]);
                    }
                }
            }
        }
        s
    })
}

#[test]
fn projection_of_zero_input_is_zero() {
    let ra = RegionAttention::<f64>::new(RaConfig::with_n(4), 3, 8, 8, &mut rng(0)).unwrap();
    let x = Tensor::constant(NdArray::zeros(&[1, 3, 8, 8]));
    let xp = project_to_regions(&x, &ra.proj).unwrap();
    assert_eq!(xp.shape(), [1, 4, 8, 8]);
    assert!(xp.to_array().data().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_projection_kernel() {
    let ra = RegionAttention::<f64>::new(RaConfig::with_n(1), 1, 8, 8, &mut rng(1)).unwrap();
    let mut k = NdArray::zeros(&[1, 1, 5, 5]);
    k.set(&[0, 0, 2, 2], 1.0);
    ra.proj.weight.set_value(k).unwrap();
    let x = randn(&[2, 1, 8, 8], 2);
    let xp = project_to_regions(&x, &ra.proj).unwrap();
    assert_eq!(xp.to_array().max_abs_diff(&x.to_array()), 0.0);
}

#[test]
fn projection_matches_loop_oracle() {
    let ra = RegionAttention::<f64>::new(RaConfig::with_n(3), 2, 8, 8, &mut rng(3)).unwrap();
    ra.proj.bias.as_ref().unwrap().set_value(NdArray::randn(&[3], 1.0, &mut rng(4))).unwrap();
    let x = randn(&[2, 2, 8, 8], 5);
    let got = project_to_regions(&x, &ra.proj).unwrap().to_array();
    let want = naive_conv(
        &x.to_array(),
        &ra.proj.weight.to_array(),
        &ra.proj.bias.as_ref().unwrap().to_array(),
        2,
    );
    assert!(got.max_abs_diff(&want) < 1e-6);
}

#[test]
fn region_mask_is_a_simplex() {
    let cfg = RaConfig::with_n(6);
    let rmg = RegionMaskGenerator::<f64>::new(&cfg, 12, 8, &mut rng(6)).unwrap();
    let xp = randn(&[2, 6, 12, 8], 7);
    for mode in [Mode::Train, Mode::Eval] {
        let rm = generate_region_mask(&xp, &rmg, mode).unwrap();
        assert_eq!(rm.coarse.shape(), [2, 6, 3, 2]);
        assert_eq!(rm.refined_logits.shape(), [2, 6, 12, 8]);
        let v = rm.values.to_array();
        for bi in 0..2 {
            for p in 0..96 {
                let s: f64 = (0..6).map(|j| v.data()[(bi * 6 + j) * 96 + p]).sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
        assert!(v.data().iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn identity_stages_compose_to_softmax_of_resampled_input() {
    let cfg = RaConfig::with_n(3);
    let rmg = RegionMaskGenerator::<f64>::new(&cfg, 8, 8, &mut rng(8)).unwrap();
    rmg.shared_linear.weight.set_value(NdArray::from_fn(&[4, 4], |i| (i / 4 == i % 4) as u8 as f64)).unwrap();
    let mut k = NdArray::zeros(&[3, 3, 3, 3]);
    for c in 0..3 {
        k.set(&[c, c, 1, 1], 1.0);
    }
    rmg.refine.weight.set_value(k).unwrap();
    rmg.bn.running_var.set_value(NdArray::full(&[3], 1.0 - rmg.bn.eps)).unwrap();
    let xp = randn(&[1, 3, 8, 8], 9);
    let rm = generate_region_mask(&xp, &rmg, Mode::Eval).unwrap();
    let want = xp.avg_pool2d(4).unwrap().upsample_bilinear(4).unwrap().softmax_over_channels().unwrap();
    assert!(rm.values.to_array().max_abs_diff(&want.to_array()) < 1e-12);
}

#[test]
fn one_linear_layer_serves_every_channel() {
    let cfg = RaConfig::with_n(2);
    let rmg = RegionMaskGenerator::<f64>::new(&cfg, 8, 8, &mut rng(10)).unwrap();
    rmg.shared_linear.bias.as_ref().unwrap().set_value(NdArray::randn(&[4], 1.0, &mut rng(11))).unwrap();
    let xp = randn(&[1, 2, 8, 8], 12);
    let rm = generate_region_mask(&xp, &rmg, Mode::Eval).unwrap();
    let down = xp.avg_pool2d(4).unwrap().to_array();
    let wt = rmg.shared_linear.weight.to_array();
    let bias = rmg.shared_linear.bias.as_ref().unwrap().to_array();
    let coarse = rm.coarse.to_array();
    for ch in 0..2 {
        for o in 0..4 {
            let want: f64 = bias.data()[o] + (0..4).map(|i| wt.get(&[o, i]) * down.data()[ch * 4 + i]).sum::<f64>();
            assert!((coarse.data()[ch * 4 + o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn shared_linear_count_is_independent_of_n() {
    for n in [1, 4, 16] {
        let ra = RegionAttention::<f32>::new(RaConfig::with_n(n), 4, 16, 16, &mut rng(13)).unwrap();
        let linear: Vec<_> = ra
            .named_state()
            .into_iter()
            .filter(|(name, t, _)| name.starts_with("rmg.shared_linear.weight") && t.shape() == [16, 16])
            .collect();
        assert_eq!(linear.len(), 1);
    }
}

#[test]
fn perturbing_shared_linear_moves_every_coarse_channel() {
    let cfg = RaConfig::with_n(5);
    let rmg = RegionMaskGenerator::<f64>::new(&cfg, 8, 8, &mut rng(14)).unwrap();
    let xp = randn(&[1, 5, 8, 8], 15);
    let before = generate_region_mask(&xp, &rmg, Mode::Eval).unwrap().coarse.to_array();
    let w = rmg.shared_linear.weight.to_array().map(|v| v + 0.1);
    rmg.shared_linear.weight.set_value(w).unwrap();
    let after = generate_region_mask(&xp, &rmg, Mode::Eval).unwrap().coarse.to_array();
    for ch in 0..5 {
        let moved = (0..4).any(|i| (after.data()[ch * 4 + i] - before.data()[ch * 4 + i]).abs() > 1e-9);
        assert!(moved, "channel {ch} unchanged");
    }
}

#[test]
fn indivisible_size_names_r() {
    let cfg = RaConfig::with_n(2);
    let rmg = RegionMaskGenerator::<f64>::new(&cfg, 8, 8, &mut rng(16)).unwrap();
    let err = generate_region_mask(&randn(&[1, 2, 10, 8], 17), &rmg, Mode::Eval).unwrap_err();
    assert!(err.to_string().contains("r=4"), "{err}");
    assert!(RegionAttention::<f64>::new(cfg, 3, 6, 8, &mut rng(0)).is_err());
}

fn dict(d: NdArray<f64>) -> RegionDictionary<f64> {
    RegionDictionary { d: Tensor::parameter(d) }
}

#[test]
fn one_hot_mask_selects_dictionary_row() {
    let d = dict(NdArray::randn(&[4, 3], 1.0, &mut rng(18)));
    let mut rm = NdArray::zeros(&[1, 4, 2, 2]);
    for (p, j) in [0usize, 3, 1, 2].iter().enumerate() {
        rm.set(&[0, *j, p / 2, p % 2], 1.0);
    }
    let y = reconstruct_from_regions(&Tensor::constant(rm), &d).unwrap().to_array();
    let dv = d.d.to_array();
    for (p, j) in [0usize, 3, 1, 2].iter().enumerate() {
        for c in 0..3 {
            assert_eq!(y.get(&[0, c, p / 2, p % 2]), dv.get(&[*j, c]));
        }
    }
}

#[test]
fn uniform_mask_gives_mean_row() {
    let d = dict(NdArray::randn(&[5, 2], 1.0, &mut rng(19)));
    let rm = Tensor::constant(NdArray::full(&[2, 5, 3, 3], 0.2));
    let y = reconstruct_from_regions(&rm, &d).unwrap().to_array();
    let dv = d.d.to_array();
    for c in 0..2 {
        let mean: f64 = (0..5).map(|j| dv.get(&[j, c])).sum::<f64>() / 5.0;
        for p in 0..9 {
            assert!((y.get(&[1, c, p / 3, p % 3]) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn reconstruction_matches_triple_loop() {
    let (n, c, h, w) = (4, 3, 5, 5);
    let d = dict(NdArray::randn(&[n, c], 1.0, &mut rng(20)));
    let rm = NdArray::uniform(&[1, n, h, w], 0.0, 1.0, &mut rng(21));
    let y = reconstruct_from_regions(&Tensor::constant(rm.clone()), &d).unwrap().to_array();
    let dv = d.d.to_array();
    for p in 0..h * w {
        for ch in 0..c {
            let mut s = 0.0;
            for j in 0..n {
                s += rm.data()[j * h * w + p] * dv.get(&[j, ch]);
            }
            assert!((y.data()[ch * h * w + p] - s).abs() < 1e-6);
        }
    }
}

#[test]
fn region_count_mismatch_is_an_error() {
    let d = dict(NdArray::zeros(&[3, 2]));
    let rm = Tensor::constant(NdArray::zeros(&[1, 4, 2, 2]));
    assert!(matches!(reconstruct_from_regions(&rm, &d), Err(Error::Shape { .. })));
}

#[test]
fn zero_dictionary_is_exact_identity() {
    let ra = RegionAttention::<f32>::new(RaConfig::with_n(4), 8, 16, 16, &mut rng(22)).unwrap();
    ra.dict.d.set_value(NdArray::zeros(&[4, 8])).unwrap();
    let x = Tensor::constant(NdArray::<f32>::randn(&[2, 8, 16, 16], 1.0, &mut rng(23)));
    let (y, rm) = ra.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.shape(), [2, 8, 16, 16]);
    assert_eq!(rm.values.shape(), [2, 4, 16, 16]);
    assert_eq!(y.to_array().data(), x.to_array().data());
}

#[test]
fn dictionary_receives_gradient() {
    let ra = RegionAttention::<f64>::new(RaConfig::with_n(4), 3, 8, 8, &mut rng(24)).unwrap();
    let x = randn(&[1, 3, 8, 8], 25);
    let (y, _) = ra.forward(&x, Mode::Train).unwrap();
    y.square().sum().backward().unwrap();
    let g = ra.dict.d.grad().expect("dictionary gradient");
    assert!(g.data().iter().any(|&v| v != 0.0));
}

#[test]
fn ra_flop_model_matches_instrumented_count() {
    let cfg = RaConfig::with_n(4);
    let ra = RegionAttention::<f32>::new(cfg, 6, 16, 8, &mut rng(26)).unwrap();
    let x = Tensor::constant(NdArray::<f32>::randn(&[2, 6, 16, 8], 1.0, &mut rng(27)));
    for mode in [Mode::Train, Mode::Eval] {
        let (_, counted) = flops::count(|| ra.forward(&x, mode).unwrap());
        assert_eq!(counted, ra_flops(&cfg, 2, 6, 16, 8, mode).unwrap());
    }
}

fn one_hot_row() -> NdArray<f64> {
    // Three pixels in a row, each a different one-hot channel: every 3x3
    // patch pair puts its nonzero taps at different positions.
    let mut x = NdArray::zeros(&[1, 3, 1, 3]);
    for p in 0..3 {
        x.set(&[0, p, 0, p], 1.0);
    }
    x
}

#[test]
fn cam_prefers_the_matching_patch() {
    let x = Tensor::constant(one_hot_row());
    let valid = NdArray::ones(&[1, 1, 1, 3]);
    let y = cam_forward(&x, &valid, CAM_PATCH, CAM_SCALE).unwrap().to_array();
    let e = CAM_SCALE.exp();
    for p in 0..3 {
        for c in 0..3 {
            let want = if c == p { e } else { 1.0 } / (e + 2.0);
            assert!((y.get(&[0, c, 0, p]) - want).abs() < 1e-12);
        }
        assert!((y.get(&[0, p, 0, p]) - 1.0).abs() < 1e-3);
    }
}

#[test]
fn cam_of_constant_features_is_constant() {
    let x = Tensor::constant(NdArray::full(&[1, 2, 6, 6], 0.7f64));
    let mut valid = NdArray::ones(&[1, 1, 6, 6]);
    valid.set(&[0, 0, 2, 3], 0.0);
    let y = cam_forward(&x, &valid, CAM_PATCH, CAM_SCALE).unwrap().to_array();
    assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
}

#[test]
fn cam_rejects_empty_context_and_counts_flops() {
    let x = randn(&[2, 2, 4, 4], 28);
    let mut valid = NdArray::ones(&[2, 1, 4, 4]);
    valid.data_mut()[16..].fill(0.0);
    assert!(cam_forward(&x, &valid, 3, CAM_SCALE).is_err());
    valid.data_mut()[20..26].fill(1.0);
    let (_, counted) = flops::count(|| cam_forward(&x, &valid, 3, CAM_SCALE).unwrap());
    assert_eq!(counted, cam_flops(2, 4, 4, 3, &[16, 6]));
}

#[test]
fn palette_is_stable_and_distinct() {
    let a = palette(16);
    assert_eq!(a, palette(16));
    for i in 0..16 {
        for j in 0..i {
            assert_ne!(a[i], a[j]);
        }
    }
}

#[test]
fn export_writes_two_maps_per_region_plus_argmax() {
    let ra = RegionAttention::<f32>::new(RaConfig::with_n(5), 3, 8, 8, &mut rng(29)).unwrap();
    let x = Tensor::constant(NdArray::<f32>::randn(&[1, 3, 8, 8], 1.0, &mut rng(30)));
    let (_, rm) = ra.forward(&x, Mode::Eval).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_region_mask(&rm, 0, dir.path()).unwrap();
    assert_eq!(files.len(), 11);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 11);
}
