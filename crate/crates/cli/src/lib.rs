//! Library side of the `wzr` experiment runner: configuration files and
//! the `certify`, `converge`, `simulate` and `holder` commands.
//!
//! Exit codes: 0 success, 1 threshold miss or certificate violation,
//! 2 configuration error, 3 runtime failure.

pub mod commands;
pub mod config;

pub use commands::{CliError, Emission};
pub use config::{ExperimentConfig, Format};
