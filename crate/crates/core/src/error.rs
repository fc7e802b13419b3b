use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the lifelong person-search pipeline.
#[derive(Debug, Error)]
pub enum LpsError {
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing manifest in {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("dataset record `{record}` is corrupt: {reason}")]
    CorruptRecord { record: String, reason: String },

    #[error("missing data file `{}`", .0.display())]
    MissingFile(PathBuf),

    #[error("checkpoint mismatch for `{name}`: {reason}")]
    CheckpointMismatch { name: String, reason: String },

    #[error("degenerate box {0:?}: area below epsilon")]
    DegenerateBox([f64; 4]),

    #[error("image is {got:?}, model expects {expected:?}")]
    ImageShape {
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },

    #[error("no references")]
    NoReferences,

    #[error("undefined recall: no ground-truth boxes")]
    UndefinedRecall,

    #[error("empty train split")]
    EmptyTrainSplit,

    #[error("{0}")]
    Empty(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error on {}: {source}", path.display())]
    Serde {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, LpsError>;

impl LpsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LpsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn serde(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        LpsError::Serde {
            path: path.into(),
            source,
        }
    }
}
