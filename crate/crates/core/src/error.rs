use std::io;

use thiserror::Error;

use crate::model::EpochRecord;

pub type Result<T, E = SedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SedError {
    #[error("line {line}: unknown class {token:?}")]
    UnknownClass { line: usize, token: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate clip id {0:?}")]
    DuplicateClip(String),

    #[error("unexpected end of stream")]
    UnexpectedEnd,

    #[error("bad file format: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot decode audio {path}: {msg}")]
    Audio { path: String, msg: String },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize, history: Vec<EpochRecord> },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SedError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        SedError::Parse { line, msg: msg.into() }
    }
}
