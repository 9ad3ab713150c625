use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionpaint_core::data::{augment, generate_mask, load_image, load_mask, read_manifest, synthetic_image, MaskedSample};
use regionpaint_core::losses::{build_default_extractor, rals_adversarial, total_generator_loss, FeatureExtractor, Side};
use regionpaint_core::net::{Discriminator, Generator, GeneratorConfig};
use regionpaint_core::nn::{zero_grad, Adam, Checkpoint, Mode, Module};
use regionpaint_core::{NdArray, Tensor};
use serde::Serialize;

use crate::config::{DatasetSource, MaskSource, Sampling, TrainConfig};
use crate::{CliError, Result};

/// Seed of the frozen feature extractor used by the perceptual and style terms.
pub const EXTRACTOR_SEED: u64 = 0x5eed;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub l1: f64,
    pub perceptual: f64,
    pub style: f64,
    pub adversarial: Option<f64>,
    pub d_loss: Option<f64>,
    pub total: f64,
}

impl StepLog {
    fn values(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [("l1", Some(self.l1)), ("perceptual", Some(self.perceptual)), ("style", Some(self.style))]
            .into_iter()
            .chain([("adversarial", self.adversarial), ("d_loss", self.d_loss), ("total", Some(self.total))])
            .filter_map(|(k, v)| v.map(|v| (k, v)))
    }
}

enum Masks {
    Files(Vec<NdArray<f32>>),
    Procedural { min_ratio: f64, max_ratio: f64 },
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    g_opt: Adam<f32>,
    d_opt: Adam<f32>,
    fx: FeatureExtractor<f32>,
    images: Vec<NdArray<f32>>,
    masks: Masks,
    rng: ChaCha8Rng,
    fixed: Vec<MaskedSample>,
    step: usize,
}

/// Loads every image listed in the dataset source at `size × size`.
pub fn load_dataset(source: &DatasetSource, size: usize, seed: u64) -> Result<Vec<NdArray<f32>>> {
    match source {
        DatasetSource::Synthetic { count } => Ok((0..*count as u64).map(|i| synthetic_image(seed + i, size)).collect()),
        DatasetSource::Manifest { path } => {
            let paths = read_manifest(path)?;
            if paths.is_empty() {
                return Err(CliError::Config(format!("manifest {} lists no images", path.display())));
            }
            Ok(paths.iter().map(|p| load_image(p, size)).collect::<regionpaint_core::Result<_>>()?)
        }
    }
}

/// Sorted PNG files of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

/// Stacks `[c, h, w]` arrays into one `[b, c, h, w]` tensor.
pub fn stack(items: &[&NdArray<f32>]) -> Tensor<f32> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let data = items.iter().flat_map(|a| a.data().iter().copied()).collect();
    Tensor::constant(NdArray::new(&shape, data).expect("stacked arrays share a shape"))
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::new(config.generator(), &mut init)?;
        let discriminator = if config.uses_discriminator() {
            Some(Discriminator::new(config.disc_base_channels, &mut init)?)
        } else {
            None
        };
        let images = load_dataset(&config.dataset, config.image_size, config.seed)?;
        let masks = match &config.masks {
            MaskSource::Dir { path, invert } => {
                let files = list_pngs(path)?;
                if files.is_empty() {
                    return Err(CliError::Config(format!("no PNG masks in {}", path.display())));
                }
                Masks::Files(
                    files
                        .iter()
                        .map(|p| load_mask(p, config.image_size, *invert))
                        .collect::<regionpaint_core::Result<_>>()?,
                )
            }
            MaskSource::Procedural { min_ratio, max_ratio } => {
                Masks::Procedural { min_ratio: *min_ratio, max_ratio: *max_ratio }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        if config.sampling == Sampling::FullBatch && config.batch_size != images.len() {
            return Err(CliError::Config(format!(
                "full_batch sampling needs batch_size = dataset size ({}), got {}",
                images.len(),
                config.batch_size
            )));
        }
        let mut trainer = Trainer {
            g_opt: Adam::new(config.lr, config.betas),
            d_opt: Adam::new(config.lr, config.betas),
            fx: build_default_extractor(EXTRACTOR_SEED),
            generator,
            discriminator,
            images,
            masks,
            rng,
            fixed: Vec::new(),
            step: 0,
            config,
        };
        if trainer.config.sampling == Sampling::FullBatch {
            trainer.fixed = (0..trainer.images.len())
                .map(|i| {
                    let mask = trainer.draw_mask()?;
                    Ok(MaskedSample::new(trainer.images[i].clone(), mask)?)
                })
                .collect::<Result<_>>()?;
        }
        Ok(trainer)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn draw_mask(&mut self) -> Result<NdArray<f32>> {
        Ok(match &self.masks {
            Masks::Files(m) => m[self.rng.random_range(0..m.len())].clone(),
            Masks::Procedural { min_ratio, max_ratio } => {
                let target = self.rng.random_range(*min_ratio..*max_ratio);
                generate_mask(self.rng.random(), self.config.image_size, target)?
            }
        })
    }

    fn draw_batch(&mut self) -> Result<Vec<MaskedSample>> {
        if self.config.sampling == Sampling::FullBatch {
            return Ok(self.fixed.clone());
        }
        (0..self.config.batch_size)
            .map(|_| {
                let gt = self.images[self.rng.random_range(0..self.images.len())].clone();
                let mask = self.draw_mask()?;
                Ok(augment(&MaskedSample::new(gt, mask)?, self.rng.random()))
            })
            .collect()
    }

    fn check_finite(&self, what: &str, v: f64) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(CliError::Numeric { step: self.step + 1, detail: format!("{what} = {v}") })
        }
    }

    /// True when every generator and discriminator parameter is finite.
    pub fn parameters_finite(&self) -> bool {
        let d = self.discriminator.iter().flat_map(|d| d.parameters());
        self.generator.parameters().into_iter().chain(d).all(|p| p.value().all_finite())
    }

    /// One discriminator update (if adversarial training is on) followed by
    /// one generator update.
    pub fn step(&mut self) -> Result<StepLog> {
        let batch = self.draw_batch()?;
        let gt = stack(&batch.iter().map(|s| &s.gt).collect::<Vec<_>>());
        let mask = stack(&batch.iter().map(|s| &s.mask).collect::<Vec<_>>());
        let corrupted = stack(&batch.iter().map(|s| &s.corrupted).collect::<Vec<_>>());

        let g_params = self.generator.parameters();
        let pred = self.generator.forward(&corrupted, &mask, Mode::Train)?.image;

        let mut d_loss = None;
        if let Some(d) = &self.discriminator {
            let d_params = d.parameters();
            zero_grad(&d_params);
            let loss = rals_adversarial(
                &d.forward(&gt, Mode::Train)?,
                &d.forward(&pred.detach(), Mode::Train)?,
                Side::Discriminator,
            )?;
            let v = loss.item() as f64;
            self.check_finite("discriminator loss", v)?;
            loss.backward()?;
            self.d_opt.step(&d_params);
            d.refresh_spectral_norms()?;
            d_loss = Some(v);
        }

        let scores = match &self.discriminator {
            Some(d) => Some((d.forward(&gt, Mode::Eval)?, d.forward(&pred, Mode::Eval)?)),
            None => None,
        };
        let (loss, report) = total_generator_loss(
            &pred,
            &gt,
            scores.as_ref().map(|(r, f)| (r, f)),
            &self.config.loss,
            &self.fx,
        )?;
        let log = StepLog {
            step: self.step + 1,
            l1: report.l1,
            perceptual: report.perceptual,
            style: report.style,
            adversarial: report.adversarial,
            d_loss,
            total: report.total,
        };
        for (name, v) in log.values() {
            self.check_finite(name, v)?;
        }
        zero_grad(&g_params);
        if loss.requires_grad() {
            loss.backward()?;
            self.g_opt.step(&g_params);
        }
        if !self.parameters_finite() {
            return Err(CliError::Numeric { step: self.step + 1, detail: "non-finite parameter after update".into() });
        }
        self.step += 1;
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "generator": self.config.generator(),
            "disc_base_channels": self.discriminator.as_ref().map(|_| self.config.disc_base_channels),
            "step": self.step,
            "seed": self.config.seed,
        });
        let mut ck = Checkpoint::new(meta);
        ck.insert_module("generator", &self.generator);
        if let Some(d) = &self.discriminator {
            ck.insert_module("discriminator", d);
        }
        ck
    }

    /// Writes a checkpoint unless some parameter is non-finite.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if !self.parameters_finite() {
            return Err(CliError::Numeric { step: self.step, detail: "refusing to save non-finite parameters".into() });
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.checkpoint().save(path)?;
        Ok(())
    }

    /// Runs the configured number of steps, logging every step to the CSV
    /// file and checkpointing every `checkpoint_every` steps and at the end.
    pub fn run(&mut self) -> Result<Vec<StepLog>> {
        if let Some(dir) = self.config.log_csv.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut log = csv::Writer::from_path(&self.config.log_csv)?;
        let mut last_good: Option<PathBuf> = None;
        let mut history = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let row = match self.step() {
                Ok(row) => row,
                Err(CliError::Numeric { step, detail }) => {
                    log.flush()?;
                    let kept = last_good.map_or("none".to_string(), |p| p.display().to_string());
                    return Err(CliError::Numeric { step, detail: format!("{detail}; last good checkpoint: {kept}") });
                }
                Err(e) => return Err(e),
            };
            log.serialize(&row)?;
            history.push(row);
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 {
                let path = self.config.checkpoint_dir.join(format!("step_{:06}.ckpt", self.step));
                self.save_checkpoint(&path)?;
                last_good = Some(path);
            }
        }
        log.flush()?;
        self.save_checkpoint(&self.final_checkpoint_path())?;
        Ok(history)
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.config.checkpoint_dir.join("final.ckpt")
    }
}

/// Rebuilds a generator from a checkpoint written by [`Trainer`].
pub fn load_generator(path: &Path) -> Result<Generator<f32>> {
    let ck = Checkpoint::load(path)?;
    let cfg: GeneratorConfig = serde_json::from_value(ck.metadata["generator"].clone())
        .map_err(|e| CliError::Config(format!("checkpoint {} has no usable generator config: {e}", path.display())))?;
    let g = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.load_module("generator", &g)?;
    Ok(g)
}
