use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regionpaint_cli::eval::{read_rows, summarize};
use regionpaint_cli::{DatasetSource, MaskSource, Sampling, TrainConfig};
use regionpaint_core::data::{load_image_native, save_image, save_mask, synthetic_image, MaskRatioBin};
use regionpaint_core::NdArray;

fn regionpaint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regionpaint")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

struct Dataset {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    masks: PathBuf,
}

fn dataset(count: usize, size: usize) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    ok(&regionpaint(&["synth", "--out-dir", s(&data), "--count", &count.to_string(), "--size", &size.to_string()]));
    Dataset { manifest: data.join("manifest.txt"), masks: data.join("masks"), root, _dir: dir }
}

fn train_small(ds: &Dataset, steps: usize) -> PathBuf {
    let cfg = TrainConfig {
        dataset: DatasetSource::Manifest { path: "data/manifest.txt".into() },
        masks: MaskSource::Dir { path: "data/masks".into(), invert: false },
        sampling: Sampling::Random,
        batch_size: 2,
        n_regions: 4,
        steps,
        checkpoint_dir: "ckpt".into(),
        log_csv: "train.csv".into(),
        ..TrainConfig::toy(Path::new("."))
    };
    let path = ds.root.join("train.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    ok(&regionpaint(&["train", "--config", s(&path)]));
    ds.root.join("ckpt/final.ckpt")
}

#[test]
fn train_then_infer_keeps_known_pixels() {
    let ds = dataset(4, 32);
    let ckpt = train_small(&ds, 3);
    assert!(ckpt.is_file());
    assert_eq!(std::fs::read_to_string(ds.root.join("train.csv")).unwrap().lines().count(), 4);

    let (h, w) = (40, 48);
    let img = synthetic_image(9, 48);
    let img = NdArray::from_fn(&[3, h, w], |i| img.data()[(i / (h * w)) * 48 * 48 + i % (h * w)]);
    let image = ds.root.join("photo.png");
    save_image(&image, &img).unwrap();
    let input = load_image_native(&image).unwrap();

    let full = ds.root.join("full.png");
    save_mask(&full, &NdArray::from_fn(&[1, h, w], |_| 1.0)).unwrap();
    let out = ds.root.join("out_full.png");
    ok(&regionpaint(&["infer", "--ckpt", s(&ckpt), "--image", s(&image), "--mask", s(&full), "--out", s(&out)]));
    let result = load_image_native(&out).unwrap();
    assert_eq!(result.shape(), &[3, h, w]);
    let worst = input.data().iter().zip(result.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(worst <= 2.0 / 255.0 + 1e-6, "{worst}");

    // Hole in the left half; the right half must come back untouched.
    let half = ds.root.join("half.png");
    save_mask(&half, &NdArray::from_fn(&[1, h, w], |p| if p % w < w / 2 { 0.0 } else { 1.0 })).unwrap();
    let out = ds.root.join("out_half.png");
    ok(&regionpaint(&["infer", "--ckpt", s(&ckpt), "--image", s(&image), "--mask", s(&half), "--out", s(&out)]));
    let result = load_image_native(&out).unwrap();
    for i in (0..3 * h * w).filter(|i| i % w >= w / 2) {
        assert!((input.data()[i] - result.data()[i]).abs() <= 2.0 / 255.0 + 1e-6, "pixel {i}");
    }
}

#[test]
fn eval_and_viz_read_a_trained_checkpoint() {
    let ds = dataset(4, 32);
    let ckpt = train_small(&ds, 1);
    let csv = ds.root.join("eval.csv");
    let out = regionpaint(&["eval", "--ckpt", s(&ckpt), "--manifest", s(&ds.manifest), "--masks", s(&ds.masks), "--out-csv", s(&csv)]);
    ok(&out);
    let rows = read_rows(&csv).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.l1_pct > 0.0 && r.psnr.is_finite() && r.ssim < 1.0));
    assert!(ds.root.join("eval_summary.csv").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("L1(%)"));

    let image = ds.root.join("data/images/img_0000.png");
    let mask = ds.masks.join("mask_0000.png");
    let viz = ds.root.join("viz");
    ok(&regionpaint(&["viz-rm", "--ckpt", s(&ckpt), "--image", s(&image), "--mask", s(&mask), "--out-dir", s(&viz)]));
    let files = std::fs::read_dir(&viz).unwrap().count();
    assert_eq!(files, 2 * 4 + 1);

    let bad = regionpaint(&["viz-rm", "--ckpt", s(&ckpt), "--image", s(&image), "--mask", s(&mask), "--out-dir", s(&viz), "--site", "5"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn identity_eval_is_perfect_and_repeatable() {
    let ds = dataset(6, 32);
    let run = |name: &str| {
        let csv = ds.root.join(name);
        ok(&regionpaint(&[
            "eval", "--identity", "--size", "32", "--manifest", s(&ds.manifest), "--masks", s(&ds.masks), "--out-csv", s(&csv),
        ]));
        csv
    };
    let a = run("a.csv");
    let b = run("b.csv");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rows = read_rows(&a).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r.l1_pct, 0.0);
        assert_eq!(r.ssim, 1.0);
        assert!(r.psnr.is_infinite() && r.psnr > 0.0);
    }

    let summary = std::fs::read_to_string(ds.root.join("a_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "bin,count,l1_pct,psnr,ssim");
    assert_eq!(lines.len(), 1 + MaskRatioBin::ALL.len());
    for (line, bin) in lines[1..].iter().zip(summarize(&rows)) {
        let want = rows.iter().filter(|r| r.bin == bin.bin.label()).count();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], bin.bin.label());
        assert_eq!(cells[1].parse::<usize>().unwrap(), want);
        if want == 0 {
            assert_eq!(&cells[2..], ["NA", "NA", "NA"]);
        } else {
            assert_eq!(cells[2].parse::<f64>().unwrap(), 0.0);
            assert_eq!(cells[4].parse::<f64>().unwrap(), 1.0);
        }
    }
}

#[test]
fn bench_counts_match_the_cost_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = regionpaint(&["bench", "--sizes", "16,32", "--n", "4", "--out-csv", s(&csv)]);
    ok(&out);
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let head = r.headers().unwrap().clone();
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row[col("ra_flops_model")], row[col("ra_flops_counted")]);
        assert_eq!(row[col("cam_flops_model")], row[col("cam_flops_counted")]);
    }
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = regionpaint(&["train", "--config", s(&dir.path().join("nope.toml"))]);
    assert_eq!(missing.status.code(), Some(2));

    let path = dir.path().join("bad.toml");
    let text = TrainConfig::toy(dir.path()).to_toml().unwrap() + "\nlearning_rate = 0.1\n";
    std::fs::write(&path, text).unwrap();
    assert_eq!(regionpaint(&["train", "--config", s(&path)]).status.code(), Some(2));

    let cfg = TrainConfig { image_size: 20, ..TrainConfig::toy(dir.path()) };
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(regionpaint(&["train", "--config", s(&path)]).status.code(), Some(2));

    let threads = Command::new(env!("CARGO_BIN_EXE_regionpaint"))
        .args(["synth", "--out-dir", s(&dir.path().join("x")), "--count", "1"])
        .env(regionpaint_cli::THREADS_ENV, "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 50, lr: 1e37, checkpoint_every: 1, ..TrainConfig::toy(dir.path()) };
    let path = dir.path().join("hot.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = regionpaint(&["train", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numeric failure"));
    assert!(!cfg.checkpoint_dir.join("final.ckpt").exists());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    for name in ["overfit.toml", "ci.toml"] {
        let cfg = TrainConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let full = TrainConfig::load(&dir.join("full.toml")).unwrap();
    assert_eq!((full.image_size, full.base_channels, full.disc_base_channels), (256, 64, 64));
    full.generator().validate().unwrap();
}
