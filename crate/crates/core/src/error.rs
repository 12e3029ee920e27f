use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
///
/// Validation errors describe bad input (malformed files, invariant
/// violations, incompatible configurations); everything else is a runtime
/// failure. The CLI maps the two families onto different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset '{name}', expected one of: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("special token '{0}' is not registered")]
    UnregisteredSpecial(String),

    #[error("duplicate special marker '{0}'")]
    DuplicateMarker(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("vocabulary fingerprint mismatch: checkpoint has {expected}, got {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{0}")]
    Empty(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::UnknownPreset { .. }
                | Error::UnregisteredSpecial(_)
                | Error::DuplicateMarker(_)
                | Error::LengthMismatch(..)
                | Error::Empty(_)
                | Error::Json(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
