//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or mechanism parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A Renyi order must be a finite real strictly greater than 1.
    #[error("invalid Renyi order: alpha must be finite and > 1, got {0}")]
    InvalidOrder(f64),

    /// Malformed numeric input (mismatched grids, empty data, bad dimensions).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Charged privacy exceeds a client's declared budget.
    #[error("budget exceeded for client {client} at round {round}: cumulative {charged} > budget {budget}")]
    BudgetExceeded {
        client: usize,
        round: usize,
        charged: f64,
        budget: f64,
    },

    /// Schedule activity and supplied mechanisms disagree.
    #[error("schedule/mechanism mismatch: {0}")]
    ScheduleMismatch(String),

    /// A transcript violates a structural invariant.
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),

    /// A mechanism cannot report message densities, so posterior replay is impossible.
    #[error("message density unavailable for client {client} at round {round}")]
    DensityUnavailable { client: usize, round: usize },

    /// Exhaustive enumeration of local datasets would exceed the configured cap.
    #[error("enumeration cap exceeded: instance needs {needed} configurations, cap is {cap}")]
    EnumerationCapExceeded { needed: u128, cap: u128 },

    /// The model has no finite observation support, so exact enumeration is impossible.
    #[error("exact enumeration requires a finite observation support: {0}")]
    EnumerationUnsupported(String),

    /// Requested operation is defined only for a narrower instance class.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A solver or aggregation step could not produce an estimate.
    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    /// Scenario configuration is structurally or semantically invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
