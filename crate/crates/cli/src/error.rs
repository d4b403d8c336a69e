use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Argument(String),
    #[error("{failed} of {total} matrix cells failed")]
    CellsFailed { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] layermatch::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn config_err<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(CliError::Config {
        key: key.to_string(),
        message: message.into(),
    })
}
