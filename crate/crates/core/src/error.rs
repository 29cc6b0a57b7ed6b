use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity: requested {requested} rows but only {available} available")]
    Capacity { requested: usize, available: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("degenerate layer `{layer}`: zero cumulative motion")]
    DegenerateLayer { layer: String },

    #[error("degenerate matching segment: teacher start and target coincide")]
    DegenerateSegment,

    #[error("training diverged at epoch {epoch}")]
    TrainingFailure { epoch: usize },

    #[error("inner unroll diverged at step {step}")]
    UnrollDivergence { step: usize },

    #[error("undefined cosine: zero gradient at start {start}")]
    UndefinedCosine { start: f64 },

    #[error("phase {phase} failed: {source}")]
    Phase {
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("student diverged on subset {subset}")]
    StudentDivergence { subset: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
