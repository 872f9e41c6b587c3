use std::path::PathBuf;

/// Errors produced by the detection engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value {value} for {context}")]
    NonFinite { context: String, value: f64 },

    #[error("expected window of length {expected}, got {actual}")]
    WindowLength { expected: usize, actual: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("variable {variable}: expected time point {expected}, got {actual}")]
    OutOfOrder {
        variable: usize,
        expected: u64,
        actual: u64,
    },

    #[error("variable {variable} at T={t}: {source}")]
    Detector {
        variable: usize,
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("error history is empty")]
    EmptyHistory,

    #[error("histories disagree: {0}")]
    HistoryMismatch(String),

    #[error("sample arity mismatch: expected {expected} values, got {actual}")]
    Arity { expected: usize, actual: usize },

    #[error("header: {0}")]
    Header(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("overlapping ground-truth intervals [{}, {}] and [{}, {}]", .first.0, .first.1, .second.0, .second.1)]
    OverlappingTruth { first: (u64, u64), second: (u64, u64) },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("malformed model snapshot: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, context: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context(),
            value,
        })
    }
}
