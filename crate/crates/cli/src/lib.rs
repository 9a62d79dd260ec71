//! Experiment runner for the `otp` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use error::CliError;
