use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AriaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AriaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed input: {message}")]
    Parse { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at (row {row}, col {col})")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("id mismatch for {what}: missing [{}], extra [{}]", missing.join(", "), extra.join(", "))]
    IdMismatch {
        what: String,
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Numeric(String),

    #[error("subspace iteration did not converge after {iterations} iterations (relative residual {residual:.3e}, tolerance {tolerance:.1e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl AriaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AriaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        AriaError::Parse {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// True for numerical failures (exit code 2 at the CLI); everything else
    /// is an input problem.
    pub fn is_numeric(&self) -> bool {
        matches!(self, AriaError::Numeric(_) | AriaError::NonConvergence { .. })
    }
}
