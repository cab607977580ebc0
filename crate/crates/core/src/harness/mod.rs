//! Experiment configuration, synthetic data, drivers and file formats.

pub mod config;
pub mod data;
pub mod experiments;
pub mod image_io;
pub mod selftest;
pub mod trace_io;

use thiserror::Error;

pub use config::{Experiment, ExperimentConfig};
pub use data::{crater_phantom, disc_phantom, poisson_degrade, sprite_phantom, PoissonSampler};
pub use experiments::{
    build_problem, run_ddesign, run_deconv, run_experiment, run_tomo, write_artifacts, ExperimentReport, Problem,
};
pub use image_io::{load_pgm, save_pgm};
pub use selftest::{selftest, SelftestReport};
pub use trace_io::{emit_plot_data, write_trace_csv, TRACE_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Solver(#[from] crate::error::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
