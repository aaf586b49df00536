//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any nadir-core operation.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A coordinate or index fell outside its valid range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// A degenerate input (zero vector, zero-area polygon) was rejected.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A file or payload did not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// A serialized artifact is truncated or internally inconsistent.
    #[error("corrupt artifact: {0}")]
    Corrupt(String),

    /// An artifact was built with an incompatible configuration.
    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    /// A network fetch failed after all retries.
    #[error("network error fetching {what}: {source}")]
    Network {
        what: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    /// A required upstream artifact is missing.
    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: String, producer: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
