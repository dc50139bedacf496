use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("config key `{key}`: {message}")]
    ConfigKey { key: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] opcov_core::Error),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(
        "estimated peak memory {needed_gb:.2} GB exceeds the limit of {limit_gb:.2} GB \
         (matrix order {order}); raise `memory_limit_gb` or reduce `m`/`threads`"
    )]
    Memory {
        needed_gb: f64,
        limit_gb: f64,
        order: usize,
    },
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// 1 for configuration problems, 3 for failed checks, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::ConfigLine { .. } | Self::ConfigKey { .. } | Self::Config(_) => 1,
            Self::Check(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
