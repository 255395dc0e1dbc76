use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths of the inputs do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A value outside the domain of the operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A text record could not be parsed. Line numbers are 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported element: {0}")]
    UnsupportedElement(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
