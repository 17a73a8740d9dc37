use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("argument outside domain: {0}")]
    OutsideDomain(String),

    #[error("acceptance level B = {level} must be below sup U = {sup}")]
    LevelNotBelowSup { level: f64, sup: f64 },

    #[error("{path}: row {row}: {msg}")]
    Csv { path: PathBuf, row: usize, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("reference vector has zero L1 norm")]
    ZeroReference,

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }
}
