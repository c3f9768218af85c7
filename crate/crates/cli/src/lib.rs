//! Experiment runner for `cbct-core`.
//!
//! A TOML config drives the pipeline generate, scan, subsample, reconstruct
//! and score. [`run_experiment`] writes the artifact tree and
//! [`sweep_params`] scans a grid of regularization weights.
//!
//! Artifact tree under `output_dir`:
//!
//! ```text
//! ground_truth.{raw,meta.json}   ground_truth_slice.pgm
//! prior.{raw,meta.json}          prior_slice.pgm          (when a prior is used)
//! metrics.csv                    timings.csv
//! angles_NNN/<label>/recon.{raw,meta.json}  diff.{raw,meta.json}
//!                    recon_slice.pgm  diff_slice.pgm
//!                    error_history.csv  objective.csv
//! sweep.csv                                               (sweep only)
//! ```

pub mod config;
pub mod experiment;
pub mod output;

use thiserror::Error;

pub use config::{AlgorithmConfig, AlgorithmKind, ExperimentConfig};
pub use experiment::{
    prepare, run_experiment, sweep_params, ExperimentOutput, RunRecord, Scenario, SweepRequest,
    SweepRow,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] cbct_core::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("all {0} reconstructions failed")]
    AllFailed(usize),
}

impl CliError {
    /// Process exit code: 2 for bad input, 3 when every solver failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Core(cbct_core::Error::Config(_)) => 2,
            Self::AllFailed(_) => 3,
            _ => 1,
        }
    }
}
