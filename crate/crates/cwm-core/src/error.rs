//! Error type shared by all modules of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CwmError {
    /// Shapes of two inputs disagree (vector lengths, matrix dimensions, component counts).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The weighted information matrix could not be inverted even after ridge jitter.
    #[error("singular design: weighted information matrix is not invertible")]
    SingularDesign,

    /// A mixture component has collapsed: too little effective weight or a
    /// covariance that stays non-positive-definite after regularization.
    #[error("degenerate component: {0}")]
    DegenerateComponent(String),

    /// Every EM restart ended in a degenerate component.
    #[error("all {0} EM restarts failed with degenerate components")]
    AllRestartsFailed(usize),

    /// A response value lies outside the support of the chosen family.
    #[error("support violation at row {row}: {message}")]
    SupportViolation { row: usize, message: String },

    /// Invalid configuration, specification, or parameter values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed data file contents (CSV cells, headers, sizes).
    #[error("data error: {0}")]
    DataError(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CwmError>;
