use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("load error at line {line}: {message}")]
    Load { line: u64, message: String },

    #[error("load error: {0}")]
    EmptyInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("fusion error: {0}")]
    Fusion(String),

    #[error("threshold monotonicity violated: {0}")]
    Monotonicity(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("discovery error: {0}")]
    Discovery(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("rule parse error at offset {offset}: {message}")]
    RuleParse { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("run directory {path}: {message}")]
    RunDir { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
