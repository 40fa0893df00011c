//! Error type shared across the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, RdaError>;

#[derive(Debug, Error)]
pub enum RdaError {
    /// Bad configuration: invalid field values, unknown keys, unparseable files.
    #[error("config error: {0}")]
    Config(String),

    /// Bad input data: shape mismatches, empty datasets, duplicate keys.
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced non-finite values or violated a numeric precondition.
    #[error("numeric abort: {0}")]
    Numeric(String),

    /// Persistence-layer failures with a stable code for each corruption mode.
    #[error("format error ({code:?}): {message}")]
    Format { code: FormatErrorCode, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distinct failure modes surfaced by the binary file loaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorCode {
    BadMagic,
    VersionMismatch,
    ChecksumMismatch,
    FingerprintMissing,
    FingerprintMismatch,
    Truncated,
    Malformed,
}

impl RdaError {
    pub fn config(msg: impl Into<String>) -> Self {
        RdaError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        RdaError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        RdaError::Numeric(msg.into())
    }

    pub fn format(code: FormatErrorCode, msg: impl Into<String>) -> Self {
        RdaError::Format { code, message: msg.into() }
    }

    /// Process exit code for the CLI: config 2, data 3, numeric 4, I/O and format 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            RdaError::Config(_) => 2,
            RdaError::Data(_) | RdaError::Format { .. } | RdaError::Io(_) => 3,
            RdaError::Numeric(_) => 4,
        }
    }
}
