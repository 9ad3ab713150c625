use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regionpaint_cli::{bench, eval, infer, synth, train, CliError, Result, TrainConfig, Trainer, THREADS_ENV};

#[derive(Parser)]
#[command(name = "regionpaint", version, about = "Region-aware attention inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator (and discriminator, when the adversarial weight is nonzero).
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fill the holes of one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat white mask pixels as holes.
        #[arg(long)]
        mask_invert: bool,
    },
    /// Score a checkpoint on a manifest of images and a directory of masks.
    Eval {
        #[arg(long, required_unless_present = "identity")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        mask_invert: bool,
        /// Skip the network and score the ground truth against itself.
        #[arg(long)]
        identity: bool,
        /// Evaluation resolution; defaults to the checkpoint's image size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Export the region masks of one attention layer as PNGs.
    VizRm {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        site: usize,
        #[arg(long)]
        mask_invert: bool,
    },
    /// Compare the cost of region attention and contextual attention.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        patch: usize,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Write a small synthetic dataset with a manifest and masks.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let k: usize = v
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let mut trainer = Trainer::new(cfg)?;
            let log = trainer.run()?;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                println!("step 1 total {:.6}, step {} total {:.6}", first.total, last.step, last.total);
            }
            println!("checkpoint: {}", trainer.final_checkpoint_path().display());
        }
        Command::Infer { ckpt, image, mask, out, mask_invert } => {
            infer::infer(&ckpt, &image, &mask, &out, mask_invert)?;
        }
        Command::Eval { ckpt, manifest, masks, out_csv, mask_invert, identity, size } => {
            let model = match (&ckpt, identity) {
                (Some(p), false) => Some(train::load_generator(p)?),
                _ => None,
            };
            let size = size.or(model.as_ref().map(|g| g.config.image_size)).unwrap_or(256);
            let rows = eval::evaluate(model.as_ref(), &manifest, &masks, mask_invert, size)?;
            eval::write_rows(&out_csv, &rows)?;
            let summary = eval::summarize(&rows);
            let summary_path = out_csv.with_file_name(format!(
                "{}_summary.csv",
                out_csv.file_stem().map_or("eval".into(), |s| s.to_string_lossy())
            ));
            eval::write_summary(&summary_path, &summary)?;
            print!("{}", eval::format_summary(&summary));
        }
        Command::VizRm { ckpt, image, mask, out_dir, site, mask_invert } => {
            let files = infer::viz_rm(&ckpt, &image, &mask, &out_dir, site, mask_invert)?;
            println!("wrote {} files to {}", files.len(), out_dir.display());
        }
        Command::Bench { sizes, n, patch, channels, out_csv } => {
            let report = bench::run(&sizes, &bench::BenchOptions { n, patch, channels, seed: 0 })?;
            bench::write_csv(&out_csv, &report)?;
            println!("flop slope vs pixels: RA {:.3}, CAM {:.3}", report.ra_slope, report.cam_slope);
            println!("time slope vs pixels: RA {:.3}, CAM {:.3}", report.ra_time_slope, report.cam_time_slope);
        }
        Command::Synth { out_dir, count, size, seed } => {
            let (manifest, masks) = synth::write_toy_dataset(&out_dir, count, size, seed)?;
            println!("manifest: {}\nmasks: {}", manifest.display(), masks.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
