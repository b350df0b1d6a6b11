use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed template pack {path} at line {line}: {message}")]
    MalformedPack {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("template `{template_id}`: missing value for field `{field}`")]
    Render { template_id: String, field: String },
    #[error("template `{template_id}`: {message}")]
    InvalidTemplate { template_id: String, message: String },
    #[error("task `{0}` has no candidates for this example")]
    DegenerateTask(String),
    #[error("task `{0}` has a single candidate and no negated templates; cannot produce false statements")]
    CannotFalsify(String),
    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),
    #[error("failed to load corpus `{dataset_id}` from {path}: {message}")]
    CorpusLoad {
        dataset_id: String,
        path: PathBuf,
        message: String,
    },
    #[error("dataset read error at line {line}: {message}")]
    DatasetRead { line: usize, message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("backend out of memory at batch size {batch_size}")]
    OutOfMemory { batch_size: usize },
    #[error("checkpoint load error at {path}: {message}")]
    CheckpointLoad { path: PathBuf, message: String },
    #[error("classification error: {0}")]
    Classification(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("config violations:\n  - {}", .0.join("\n  - "))]
    ConfigViolations(Vec<String>),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
