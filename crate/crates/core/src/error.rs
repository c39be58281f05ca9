use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DseError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("duplicate dialogue id {id:?} at line {line}")]
    DuplicateDialogue { id: String, line: usize },

    #[error("invalid configuration for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty token sequence at row {0}")]
    EmptyTokens(usize),

    #[error("non-finite value in loss for anchor {anchor}")]
    NonFiniteLoss { anchor: usize },

    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(&'static str),

    #[error("checkpoint error (format {version}): {message}")]
    Checkpoint {
        version: &'static str,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl DseError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DseError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DseError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
