use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("capacity exceeded: requested {requested} instances but only {available} distinct exist")]
    Capacity { requested: usize, available: u64 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("stale artifact {path}: recorded digest {expected}, found {found}")]
    StaleArtifact {
        path: String,
        expected: String,
        found: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
