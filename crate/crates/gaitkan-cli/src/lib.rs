//! Library surface of the experiment driver, shared by the binary and the
//! acceptance suite.

pub mod commands;
pub mod config;
pub mod reports;

pub use commands::CliError;
pub use config::ExperimentConfig;
