use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parameter sets are not congruent: {0}")]
    Incongruent(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("record `{id}` has no label at level `{level}`")]
    MissingLabel { id: String, level: String },

    #[error("need at least {needed} classes, only {available} available{context}")]
    InsufficientClasses { needed: usize, available: usize, context: String },

    #[error("class `{class}` has {available} usable records, need {needed}")]
    InsufficientRecords { class: String, needed: usize, available: usize },

    #[error("expansion mode {mode} does not match payload: {detail}")]
    ModeMismatch { mode: String, detail: String },

    #[error("class `{class}` has {available} example questions, {needed} requested")]
    NotEnoughExamples { class: String, needed: usize, available: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
