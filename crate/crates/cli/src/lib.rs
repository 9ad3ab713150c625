//! Training, inference, evaluation, visualization and benchmarking on top of
//! `regionpaint-core`. The `regionpaint` binary is a thin argument parser over
//! the functions exported here.

pub mod bench;
pub mod config;
pub mod eval;
pub mod infer;
pub mod synth;
pub mod train;

pub use config::{DatasetSource, MaskSource, Sampling, TrainConfig, SCHEMA_VERSION};
pub use train::{StepLog, Trainer};

/// Environment variable holding the worker-thread count for op parallelism.
pub const THREADS_ENV: &str = "REGIONPAINT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },
    #[error(transparent)]
    Core(#[from] regionpaint_core::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 3 for numeric
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Core(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
