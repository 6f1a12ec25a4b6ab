//! Error types shared across the toolkit.

use std::io;

use thiserror::Error;

/// Parse failures of the `.actv` activation container. Every variant names
/// the byte offset where decoding stopped.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic at byte {offset}: expected \"ACTV\"")]
    BadMagic { offset: u64 },
    #[error("unsupported container version {found} at byte {offset} (expected {expected})")]
    VersionMismatch { offset: u64, found: u32, expected: u32 },
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: u64, message: String },
    #[error("truncated tensor block at byte {offset}: need {needed} bytes, {available} available")]
    Truncated { offset: u64, needed: u64, available: u64 },
    #[error("dimension mismatch at byte {offset}: {message}")]
    DimensionMismatch { offset: u64, message: String },
}

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation does not hold for the supplied data.
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("read error at byte {offset}: {source}")]
    Stream { offset: u64, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("cassette has no recorded response for key {0}")]
    CassetteMiss(String),
    #[error("cassette integrity violation: {0}")]
    Integrity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
