use std::path::PathBuf;

use crate::recovery::RecoveryResult;
use crate::skeleton::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid skeleton: {}", join_violations(.0))]
    Skeleton(Vec<Violation>),

    #[error("required joint `{0}` is missing")]
    MissingJoint(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },

    #[error("template mismatch: model expects `{expected}`, got `{actual}`")]
    TemplateMismatch { expected: String, actual: String },

    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(String),

    #[error("candidate effectors exhausted after {} steps", .best.effectors.len())]
    Exhausted { best: Box<RecoveryResult> },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("shape bank file: {0}")]
    BankFormat(String),

    #[error("scene person {person}: {message}")]
    Scene { person: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic, not a checkpoint file")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("architecture hash mismatch: file {found}, expected {expected}")]
    Hash { found: String, expected: String },
    #[error("file is truncated or corrupt: {0}")]
    Corrupt(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
