use thiserror::Error;

/// Errors raised by the library. Messages name the offending quantity.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("replay unavailable: {0}")]
    ReplayUnavailable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
