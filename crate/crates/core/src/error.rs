//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor ops, file formats, preprocessing and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt file: {0}")]
    Corruption(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("mapping error: {0}")]
    Mapping(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("leakage error: {0}")]
    Leakage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code bucket for the CLI: 3 for bad inputs, 4 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dim(_)
            | Error::InvalidKernel(_)
            | Error::Argument(_)
            | Error::Mapping(_)
            | Error::Coverage(_)
            | Error::Leakage(_) => 3,
            _ => 4,
        }
    }
}
