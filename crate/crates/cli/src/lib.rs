//! Experiment orchestration for `layermatch`: strict configs, method × seed ×
//! sweep matrices, verification checks and summary reports.

pub mod config;
mod error;
pub mod matrix;
pub mod report;
pub mod verify;

pub use error::{CliError, Result};
