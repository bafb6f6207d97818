//! Crate-wide error type.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A category has no usable data (empty source with positive weight, etc.).
    #[error("missing data: {0}")]
    MissingData(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error{}: {msg}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    /// A token in a creation-ordered vocabulary has no valid two-way split.
    #[error("cannot reconstruct merge for token {token}")]
    Reconstruction { token: String },

    /// Malformed or incompatible on-disk artifact (bad magic, checksum, version).
    #[error("format error: {0}")]
    Format(String),

    /// Inputs that must describe the same tokenizer do not (vocab hash mismatch).
    #[error("input mismatch: {0}")]
    InputMismatch(String),

    /// External solver invocation or solution parsing failed.
    #[error("solver backend error: {0}")]
    Backend(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
