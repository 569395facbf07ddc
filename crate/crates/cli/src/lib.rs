//! Library side of the `bels` command-line tool.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{GenerateSpec, ModelChoice, RunConfig};
pub use error::CliError;
