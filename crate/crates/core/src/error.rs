use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CedoError>;

#[derive(Debug, Error)]
pub enum CedoError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("stale state: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CedoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CedoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CedoError::Config(_) | CedoError::Argument(_) => 2,
            CedoError::Shape(_)
            | CedoError::State(_)
            | CedoError::Degenerate(_)
            | CedoError::Parse(_)
            | CedoError::Io { .. } => 3,
            CedoError::Numeric(_) | CedoError::Divergence { .. } => 4,
        }
    }
}
