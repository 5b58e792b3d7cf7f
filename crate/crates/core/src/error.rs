use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes. The CLI maps them onto exit codes 1, 2 and 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: wrong shapes, out-of-range parameters, bad files.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Operand spaces disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Well-formed input outside the model's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iteration or decomposition did not behave.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
