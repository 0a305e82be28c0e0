use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the adaptive-testing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error at line {line}: {message}")]
    Ingest { line: u64, message: String },

    #[error("dataset is empty after filtering")]
    DatasetEmpty,

    #[error("need at least {needed} students, found {found}")]
    InsufficientStudents { needed: usize, found: usize },

    #[error("cannot partition a student with {0} records (need at least 2)")]
    Partition(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("question index {index} out of range for {num_questions} questions")]
    QuestionOutOfRange { index: usize, num_questions: usize },

    #[error("duplicate question {0} in administered list")]
    DuplicateQuestion(usize),

    #[error("no question is available for selection")]
    NoAvailableQuestion,

    #[error("meta set is empty")]
    EmptyMetaSet,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("question count mismatch: checkpoint has {checkpoint}, data has {data}")]
    QuestionCountMismatch { checkpoint: usize, data: usize },

    #[error("training failed at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
