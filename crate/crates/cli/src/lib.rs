//! Experiment harness for the extrapolation study.
//!
//! Each subcommand resolves an [`config::ExperimentSpec`] (defaults, then a
//! TOML file, then flags), runs it, and writes CSVs into `--out`.

pub mod config;
pub mod csv;
pub mod experiments;

pub use config::{Experiment, ExperimentSpec, Overrides};
pub use experiments::{run, Outcome, RunError};

/// Worker-count override for the rayon pool.
pub const WORKERS_ENV: &str = "EXTRAPOL_WORKERS";
