use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in row {row} of {context}")]
    NonFinite { context: &'static str, row: usize },

    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: &'static str, detail: String },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown token id {id} (vocabulary size {vocab})")]
    UnknownToken { id: u32, vocab: usize },

    #[error("sequence of length {len} exceeds maximum {max}; truncate by at least {excess} tokens")]
    Overlength { len: usize, max: usize, excess: usize },

    #[error("dimension {dim} is not a configured Matryoshka dimension {configured:?}")]
    UnconfiguredDim { dim: usize, configured: Vec<usize> },

    #[error("non-finite loss at step {step} (batch ids {batch:?})")]
    Divergence { step: usize, batch: Vec<u64> },

    #[error("malformed {what} at byte offset {offset}: {detail}")]
    Format {
        what: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("stale or missing artifact: {0}")]
    Stale(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "non-finite",
            Error::Shape { .. } => "shape",
            Error::NotSymmetric { .. } => "not-symmetric",
            Error::Invalid(_) => "invalid-argument",
            Error::UnknownToken { .. } => "unknown-token",
            Error::Overlength { .. } => "overlength",
            Error::UnconfiguredDim { .. } => "unconfigured-dim",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Stale(_) => "stale-artifact",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
