//! Unified error type for the toolkit.

/// Errors raised by watermarking, spectral analysis, data generation,
/// training, and file I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector or matrix dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Too few data points remain to run the requested computation.
    #[error("insufficient data: need at least {needed}, have {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Training produced a non-finite loss or parameter.
    #[error("training failure at epoch {epoch}: {reason}")]
    TrainingFailure { epoch: usize, reason: String },

    /// A metric is undefined for the given inputs (e.g. average precision
    /// with no positive items).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A configuration value was rejected.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file exists but its contents do not parse as the expected format.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
