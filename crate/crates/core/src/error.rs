use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants split into two families: numerical failures (ill-conditioned
/// kernels, non-finite data) and everything else (bad configuration, shapes,
/// I/O, malformed files). [`Error::is_numerical`] tells them apart; the CLI
/// uses it to pick its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image size mismatch: expected {expected}x{expected}, got {got}x{got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("cholesky factorization failed even with jitter {jitter:.3e}")]
    CholeskyFailure { jitter: f64 },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("training targets are empty")]
    EmptyTrain,

    #[error("length mismatch: {left} predictions vs {right} targets")]
    LengthMismatch { left: usize, right: usize },

    #[error("nonpositive predictive variance at index {index}: {value}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("candidate pool exhausted after {queried} queries")]
    PoolExhausted { queried: usize },

    #[error("item {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("feature cache checksum mismatch")]
    ChecksumMismatch,

    #[error("feature cache was built with a different scattering configuration")]
    ConfigDigestMismatch,

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_index(index: usize, source: Error) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(source),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics rather than of the inputs' shape or
    /// the environment.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::CholeskyFailure { .. }
            | Error::NonFiniteInput(_)
            | Error::NonPositiveVariance { .. } => true,
            Error::AtIndex { source, .. } | Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
