use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read config {path}: {source}")]
    ConfigIo { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] corl_core::error::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::ConfigIo { .. }
            | BenchError::Malformed(_)
            | BenchError::Invalid { .. }
            | BenchError::Usage(_) => 2,
            BenchError::Core(_) => 1,
        }
    }
}
