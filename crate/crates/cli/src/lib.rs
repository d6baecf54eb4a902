//! Command-line layer: configuration resolution, single runs, sweeps and
//! standalone decomposition.

pub mod commands;
pub mod config;

pub use commands::{ExperimentResult, SummaryRow, VERSION};
pub use config::{ConfigError, ExperimentConfig, Settings};
