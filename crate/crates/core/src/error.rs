use thiserror::Error;

/// Errors produced by the simulation and extraction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fell outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data did not satisfy a structural requirement (shape, length, index).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Closed-form template constants do not join continuously.
    #[error("coefficient consistency: {0}")]
    Coefficients(String),

    /// A numerical solver failed to produce a result.
    #[error("solver error: {0}")]
    Solver(String),

    /// Malformed binary or text data.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
