//! Error type for experiment orchestration.

use thiserror::Error;

/// Everything that can go wrong while building or running an experiment.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid experiment configuration, with the offending field named.
    #[error("invalid config: {0}")]
    Config(String),

    /// A train or distill job failed; the job label identifies the failing
    /// configuration (key index, ensemble, student slot).
    #[error("job `{job}` failed: {source}")]
    Training {
        job: String,
        #[source]
        source: cosmark::Error,
    },

    /// Two watermark keys in one multi-watermark experiment are identical.
    #[error("duplicate watermark key at indices {first} and {second}")]
    DuplicateKey { first: usize, second: usize },

    /// No blob layout satisfied the center-separation screen.
    #[error("no blob layout with min center separation {min_separation} found in {attempts} attempts")]
    LayoutRejected { min_separation: f64, attempts: u32 },

    /// The spectral-power bound failed, which indicates an implementation
    /// bug: the inequality is a theorem, not an empirical tendency.
    #[error(
        "spectral bound violated at f = {frequency}: P_D = {p_d} outside [{lower}, {upper}] \
         beyond slack {slack}"
    )]
    BoundViolation { frequency: f64, p_d: f64, lower: f64, upper: f64, slack: f64 },

    /// A ranking metric was requested on inputs where it is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Error propagated from the core toolkit.
    #[error(transparent)]
    Core(#[from] cosmark::Error),

    /// Filesystem failure while writing experiment artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Serialization failure while writing report JSON.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the harness.
pub type Result<T> = std::result::Result<T, Error>;
