//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or unsupported file contents (headers, tables, archives).
    #[error("format error: {0}")]
    Format(String),

    /// Structurally valid inputs that violate a contract (dimension
    /// mismatches, missing columns, degenerate designs, non-finite data).
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure (non-positive-definite matrix, failed embedding).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad configuration file or invalid parameter combination.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code contract: 2 for data/format problems, 3 for
    /// numeric failures (usage errors are handled by the CLI parser).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
