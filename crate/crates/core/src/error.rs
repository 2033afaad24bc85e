use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate commit {hash} in repository {repo}")]
    DuplicateCommit { repo: String, hash: String },

    #[error("no metrics snapshot for commits: {}", .0.join(", "))]
    MissingMetrics(Vec<String>),

    #[error("degenerate predictor {0}: all values are equal")]
    DegeneratePredictor(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("non-finite log density ({0})")]
    NonFinite(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
