//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by dataset handling, model construction, and metrics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Paired differences are constant; the t statistic is undefined but the
    /// mean difference is still meaningful, so it rides along.
    #[error("degenerate paired differences (zero variance), mean delta {mean_delta}")]
    DegenerateDifferences { mean_delta: f64 },

    #[error("unsupported capability: {0}")]
    Unsupported(String),

    #[error("non-finite value encountered in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
