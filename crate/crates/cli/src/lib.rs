//! Command-line workflows around `pstm-core`: data loading, run
//! configuration, artifacts on disk and benchmark reports.

pub mod args;
pub mod benchmark;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod report;

pub use args::Cli;
pub use config::RunConfig;
pub use error::{exit, CliError};
