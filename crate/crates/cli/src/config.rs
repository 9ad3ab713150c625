use std::path::{Path, PathBuf};

use regionpaint_core::lga::GlobalKind;
use regionpaint_core::losses::LossWeights;
use regionpaint_core::net::{GeneratorConfig, LgaPlacement, DISC_MIN_SIZE};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Newline-delimited image paths.
    Manifest { path: PathBuf },
    /// `count` procedurally drawn images, see [`regionpaint_core::data::synthetic_image`].
    Synthetic { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaskSource {
    /// Single-channel PNG masks, drawn uniformly per sample.
    Dir {
        path: PathBuf,
        #[serde(default)]
        invert: bool,
    },
    /// Random-walk brush strokes with a hole ratio drawn from `[min_ratio, max_ratio)`.
    Procedural { min_ratio: f64, max_ratio: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every batch slot draws an image, a fresh mask and a flip at random.
    #[default]
    Random,
    /// Every step sees the whole dataset in order, each image with one mask
    /// fixed at startup and no flips. `batch_size` must equal the dataset size.
    FullBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub dataset: DatasetSource,
    pub masks: MaskSource,
    pub image_size: usize,
    pub base_channels: usize,
    pub n_regions: usize,
    pub r: usize,
    pub lga_placement: LgaPlacement,
    #[serde(default = "default_attention")]
    pub attention: GlobalKind,
    #[serde(default = "default_dilated_blocks")]
    pub dilated_blocks: usize,
    #[serde(default = "default_disc_channels")]
    pub disc_base_channels: usize,
    pub loss: LossWeights,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    pub batch_size: usize,
    #[serde(default)]
    pub sampling: Sampling,
    pub steps: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    /// Write a checkpoint every this many steps, in addition to the final one.
    pub checkpoint_every: usize,
    pub log_csv: PathBuf,
}

fn default_attention() -> GlobalKind {
    GlobalKind::Region
}

fn default_dilated_blocks() -> usize {
    GeneratorConfig::default().dilated_blocks
}

fn default_disc_channels() -> usize {
    16
}

fn default_lr() -> f64 {
    1e-4
}

fn default_betas() -> (f64, f64) {
    (0.5, 0.999)
}

impl TrainConfig {
    /// A small in-memory configuration for the given output directory.
    pub fn toy(out_dir: &Path) -> Self {
        TrainConfig {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetSource::Synthetic { count: 4 },
            masks: MaskSource::Procedural { min_ratio: 0.1, max_ratio: 0.5 },
            image_size: 32,
            base_channels: 8,
            n_regions: 8,
            r: 4,
            lga_placement: LgaPlacement::Encoder,
            attention: GlobalKind::Region,
            dilated_blocks: default_dilated_blocks(),
            disc_base_channels: default_disc_channels(),
            loss: LossWeights::l1_only(),
            lr: default_lr(),
            betas: default_betas(),
            batch_size: 4,
            sampling: Sampling::FullBatch,
            steps: 10,
            seed: 0,
            checkpoint_dir: out_dir.join("ckpt"),
            checkpoint_every: 0,
            log_csv: out_dir.join("train.csv"),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Manifest { path } = &mut self.dataset {
            fix(path);
        }
        if let MaskSource::Dir { path, .. } = &mut self.masks {
            fix(path);
        }
        fix(&mut self.checkpoint_dir);
        fix(&mut self.log_csv);
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.base_channels,
            image_size: self.image_size,
            lga_placement: self.lga_placement,
            attention: self.attention,
            n_regions: self.n_regions,
            r: self.r,
            dilated_blocks: self.dilated_blocks,
            ..GeneratorConfig::default()
        }
    }

    pub fn uses_discriminator(&self) -> bool {
        self.loss.w_adv > 0.0
    }

    /// Checks ranges and that every input path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        for (name, v) in [
            ("image_size", self.image_size),
            ("base_channels", self.base_channels),
            ("n_regions", self.n_regions),
            ("r", self.r),
            ("disc_base_channels", self.disc_base_channels),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("adam betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        self.loss.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.generator().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.uses_discriminator() && self.image_size < DISC_MIN_SIZE {
            return bad(format!(
                "the adversarial loss needs image_size >= {DISC_MIN_SIZE}, got {}",
                self.image_size
            ));
        }
        match &self.dataset {
            DatasetSource::Manifest { path } if !path.is_file() => {
                return bad(format!("dataset manifest {} does not exist", path.display()));
            }
            DatasetSource::Synthetic { count: 0 } => return bad("synthetic dataset needs count > 0".into()),
            _ => {}
        }
        match &self.masks {
            MaskSource::Dir { path, .. } if !path.is_dir() => {
                return bad(format!("mask directory {} does not exist", path.display()));
            }
            MaskSource::Procedural { min_ratio, max_ratio }
                if !(0.0 < *min_ratio && min_ratio < max_ratio && *max_ratio < 1.0) =>
            {
                return bad(format!("mask ratios need 0 < min < max < 1, got [{min_ratio}, {max_ratio})"));
            }
            _ => {}
        }
        Ok(())
    }
}
