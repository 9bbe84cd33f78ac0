//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Top-level error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A budget schedule could not be derived from the given ratios.
    #[error("invalid budget schedule: {0}")]
    Schedule(String),

    /// A persisted file failed to parse.
    #[error(transparent)]
    Parse(#[from] ParseError),

    /// An iterative numeric routine failed to converge.
    #[error("numeric failure after {iterations} iterations: {message}")]
    Numeric { message: String, iterations: usize },

    /// Invalid configuration (CLI or JSON).
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Binary file parse failures, one variant per failure mode so callers can
/// report the exact byte-level cause.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload: {missing} more bytes expected")]
    Truncated { missing: u64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange { row: usize, label: u32, classes: u32 },

    #[error("invalid header field `{field}`: {value}")]
    BadHeader { field: &'static str, value: u64 },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn schedule(msg: impl Into<String>) -> Self {
        Error::Schedule(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code category used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Contract(_) | Error::Schedule(_) => 3,
            Error::Parse(_) | Error::Json(_) => 4,
            Error::Numeric { .. } => 5,
            Error::Io(_) => 6,
        }
    }
}
