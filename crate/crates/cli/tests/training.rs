use regionpaint_cli::{CliError, DatasetSource, Sampling, TrainConfig, Trainer};
use regionpaint_core::lga::GlobalKind;
use regionpaint_core::losses::LossWeights;
use regionpaint_core::net::LgaPlacement;
use regionpaint_core::nn::{Checkpoint, Module};
use regionpaint_core::NdArray;

fn snapshot(groups: &[(String, Vec<regionpaint_core::Tensor<f32>>)]) -> Vec<(String, Vec<NdArray<f32>>)> {
    groups.iter().map(|(n, ps)| (n.clone(), ps.iter().map(|p| p.to_array()).collect())).collect()
}

fn all_groups(t: &Trainer) -> Vec<(String, Vec<regionpaint_core::Tensor<f32>>)> {
    let mut groups = t.generator.groups();
    if let Some(d) = &t.discriminator {
        for (i, l) in d.spectral_layers().enumerate() {
            groups.push((format!("disc.{i}"), l.parameters()));
        }
    }
    groups
}

fn gan_config(dir: &std::path::Path, place: LgaPlacement, attention: GlobalKind) -> TrainConfig {
    TrainConfig {
        dataset: DatasetSource::Synthetic { count: 2 },
        image_size: 64,
        n_regions: 4,
        lga_placement: place,
        attention,
        loss: LossWeights::default(),
        batch_size: 2,
        steps: 1,
        ..TrainConfig::toy(dir)
    }
}

#[test]
fn one_step_changes_every_parameter_group() {
    for (place, attention) in [
        (LgaPlacement::Encoder, GlobalKind::Region),
        (LgaPlacement::Decoder, GlobalKind::Region),
        (LgaPlacement::Encoder, GlobalKind::Contextual),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(gan_config(dir.path(), place, attention)).unwrap();
        let groups = all_groups(&t);
        let before = snapshot(&groups);
        t.step().unwrap();
        let after = snapshot(&groups);
        for ((name, b), (_, a)) in before.iter().zip(&after) {
            let changed = b.iter().zip(a).any(|(x, y)| x.data() != y.data());
            assert!(changed, "{place:?}/{attention:?}: group {name} did not change");
        }
    }
}

#[test]
fn same_seed_gives_identical_curves() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            steps: 6,
            sampling: Sampling::Random,
            batch_size: 2,
            ..TrainConfig::toy(dir.path())
        };
        let mut t = Trainer::new(cfg).unwrap();
        let log = t.run().unwrap();
        let csv = std::fs::read(&t.config.log_csv).unwrap();
        (log, csv)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}

#[test]
fn zero_steps_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 0, ..TrainConfig::toy(dir.path()) };
    let mut t = Trainer::new(cfg).unwrap();
    let init = t.generator.named_state();
    assert!(t.run().unwrap().is_empty());
    let ck = Checkpoint::load(&t.final_checkpoint_path()).unwrap();
    for (name, tensor, _) in init {
        assert_eq!(ck.tensors[&format!("generator.{name}")].data(), tensor.to_array().data(), "{name}");
    }
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 4, checkpoint_every: 2, ..TrainConfig::toy(dir.path()) };
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    for name in ["step_000002.ckpt", "step_000004.ckpt", "final.ckpt"] {
        assert!(t.config.checkpoint_dir.join(name).is_file(), "{name}");
    }
    let log = std::fs::read_to_string(&t.config.log_csv).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,l1,perceptual,style,adversarial,d_loss,total");
    assert_eq!(log.lines().count(), 5);
}

#[test]
fn divergence_aborts_without_writing_bad_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 50, lr: 1e37, checkpoint_every: 1, ..TrainConfig::toy(dir.path()) };
    let mut t = Trainer::new(cfg).unwrap();
    let err = t.run().unwrap_err();
    assert!(matches!(err, CliError::Numeric { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(!t.final_checkpoint_path().exists());
    for entry in std::fs::read_dir(&t.config.checkpoint_dir).into_iter().flatten() {
        let ck = Checkpoint::load(&entry.unwrap().path()).unwrap();
        assert!(ck.tensors.values().all(|v| v.all_finite()));
    }
}
