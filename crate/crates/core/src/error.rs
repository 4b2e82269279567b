use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: {0}")]
    Truncation(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("inconsistent manifest: {0}")]
    Consistency(String),

    #[error("unresolved reference: {0}")]
    Reference(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("corrupt map: {0}")]
    Corruption(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 1 for I/O failures, 2 for everything that is a
    /// validation problem with the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 1,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 1,
            Error::Json(e) if e.is_io() => 1,
            _ => 2,
        }
    }
}
