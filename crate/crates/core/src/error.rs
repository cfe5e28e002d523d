use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("model is not recourse-ready: {0}")]
    NotRecourseReady(String),
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("no label flip found along path to cluster {cluster}")]
    NoFlip { cluster: usize },
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
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
