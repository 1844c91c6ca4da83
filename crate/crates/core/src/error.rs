use thiserror::Error;

/// Errors raised when an input violates the contract of an operation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),

    #[error("operator is not a +/-1 involution (max deviation {0:.3e})")]
    NotInvolution(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed conic program: {0}")]
    MalformedProgram(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("malformed data: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
