use super::*;
use image::{GrayImage, Luma, Rgb, RgbImage};

fn write_rgb(dir: &Path, name: &str, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> PathBuf {
    let p = dir.join(name);
    RgbImage::from_fn(w, h, |x, y| Rgb(f(x, y))).save(&p).unwrap();
    p
}

#[test]
fn load_maps_8bit_onto_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let black = load_image(&write_rgb(dir.path(), "k.png", 8, 8, |_, _| [0; 3]), 8).unwrap();
    assert!(black.data().iter().all(|&v| v == -1.0));
    let white = load_image(&write_rgb(dir.path(), "w.png", 8, 8, |_, _| [255; 3]), 4).unwrap();
    assert!(white.data().iter().all(|&v| v == 1.0));
    let gray = load_image(&write_rgb(dir.path(), "g.png", 6, 6, |_, _| [128; 3]), 6).unwrap();
    assert!(gray.data().iter().all(|&v| (v - (2.0 * 128.0 / 255.0 - 1.0)).abs() < 1e-6));
}

#[test]
fn load_center_crops() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_rgb(dir.path(), "wide.png", 12, 4, |x, _| if (4..8).contains(&x) { [255; 3] } else { [0; 3] });
    let img = load_image(&p, 4).unwrap();
    assert!(img.data().iter().all(|&v| v == 1.0));
    assert!(load_image(&dir.path().join("missing.png"), 4).unwrap_err().to_string().contains("missing.png"));
}

#[test]
fn save_load_round_trip_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let img = synthetic_image(5, 16);
    let p = dir.path().join("r.png");
    save_image(&p, &img).unwrap();
    let back = load_image(&p, 16).unwrap();
    assert!(back.max_abs_diff(&img) <= 2.0 / 255.0 / 2.0 + 1e-6);
    let again = dir.path().join("r2.png");
    save_image(&again, &back).unwrap();
    assert_eq!(load_image(&again, 16).unwrap().data(), back.data());
}

#[test]
fn masks_threshold_and_invert() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.png");
    GrayImage::from_fn(4, 4, |x, _| Luma([[0, 127, 128, 255][x as usize]])).save(&p).unwrap();
    let m = load_mask(&p, 4, false).unwrap();
    assert_eq!(&m.data()[..4], &[0.0, 0.0, 1.0, 1.0]);
    assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let inv = load_mask(&p, 4, true).unwrap();
    assert_eq!(&inv.data()[..4], &[1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn generated_masks_hit_target_deterministically() {
    for (seed, size, target) in [(1, 256, 0.25), (2, 64, 0.45), (3, 32, 0.15), (4, 128, 0.6)] {
        let a = generate_mask(seed, size, target).unwrap();
        assert_eq!(a.data(), generate_mask(seed, size, target).unwrap().data());
        let r = hole_ratio(&a);
        assert!((r - target).abs() <= RATIO_TOLERANCE, "{r} vs {target}");
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
    assert!(generate_mask(0, 64, 0.7).is_err());
    assert!(generate_mask(0, 64, 0.0).is_err());
}

fn mask_with_holes(holes: usize, total: usize) -> NdArray<f32> {
    NdArray::from_fn(&[1, 1, total], |i| if i < holes { 0.0 } else { 1.0 })
}

#[test]
fn ratio_bins_are_half_open() {
    assert_eq!(ratio_bin(&mask_with_holes(25, 100)), MaskRatioBin::R20To30);
    assert_eq!(ratio_bin(&mask_with_holes(20, 100)), MaskRatioBin::R20To30);
    assert_eq!(ratio_bin(&mask_with_holes(19, 100)), MaskRatioBin::R10To20);
    assert_eq!(ratio_bin(&mask_with_holes(55, 100)), MaskRatioBin::Other);
    assert_eq!(ratio_bin(&mask_with_holes(5, 100)), MaskRatioBin::Other);
    assert_eq!(ratio_bin(&mask_with_holes(50, 100)), MaskRatioBin::Other);
    assert_eq!(MaskRatioBin::from_label("30-40%"), Some(MaskRatioBin::R30To40));
}

#[test]
fn samples_and_flips() {
    let gt = synthetic_image(1, 16);
    let mask = generate_mask(9, 16, 0.3).unwrap();
    let s = MaskedSample::new(gt.clone(), mask.clone()).unwrap();
    for i in 0..gt.numel() {
        assert_eq!(s.corrupted.data()[i], gt.data()[i] * mask.data()[i % 256]);
    }
    assert!((s.hole_ratio - (1.0 - mask.data().iter().map(|&v| v as f64).sum::<f64>() / 256.0)).abs() < 1e-6);
    let f = flip_horizontal(&s);
    assert_eq!(f.gt.get(&[1, 3, 0]), s.gt.get(&[1, 3, 15]));
    assert_eq!(hole_ratio(&f.mask), s.hole_ratio);
    let ff = flip_horizontal(&f);
    assert_eq!(ff.gt.data(), s.gt.data());
    assert_eq!(ff.corrupted.data(), s.corrupted.data());
    for seed in 0..8 {
        assert_eq!(augment(&s, seed).gt.data(), augment(&s, seed).gt.data());
    }
    let flipped = (0..64).filter(|&seed| augment(&s, seed).gt.data() != s.gt.data()).count();
    assert!((16..=48).contains(&flipped));
    assert!(MaskedSample::new(gt, NdArray::full(&[1, 16, 16], 0.5)).is_err());
}

#[test]
fn manifest_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("list.txt");
    std::fs::write(&p, "a.png\n\n# comment\n/abs/b.png\n").unwrap();
    let files = read_manifest(&p).unwrap();
    assert_eq!(files, vec![dir.path().join("a.png"), PathBuf::from("/abs/b.png")]);
}

#[test]
fn native_mask_keeps_its_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.png");
    let m = NdArray::from_fn(&[1, 5, 9], |i| if i % 3 == 0 { 0.0 } else { 1.0 });
    save_mask(&p, &m).unwrap();
    assert_eq!(load_mask_native(&p, false).unwrap().data(), m.data());
    let inv = load_mask_native(&p, true).unwrap();
    assert!(inv.data().iter().zip(m.data()).all(|(a, b)| a + b == 1.0));
}

#[test]
fn resize_preserves_constants_and_shape() {
    let img = NdArray::from_fn(&[3, 6, 10], |i| (i / 60) as f32 * 0.25);
    let out = resize(&img, 13, 4, false).unwrap();
    assert_eq!(out.shape(), [3, 13, 4]);
    for (c, plane) in out.data().chunks(52).enumerate() {
        assert!(plane.iter().all(|&v| (v - c as f32 * 0.25).abs() < 1e-6));
    }
    let mask = NdArray::from_fn(&[1, 8, 8], |i| if i % 8 < 4 { 0.0 } else { 1.0 });
    let up = resize(&mask, 16, 16, true).unwrap();
    assert!(up.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(resize(&img, 6, 10, false).unwrap().data(), img.data());
}
