//! Command-line plumbing around `funcreg-core`: functional CSV files, model
//! persistence, run configuration and the Monte Carlo benchmark.

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod persist;

pub use error::{CliError, CliResult};
