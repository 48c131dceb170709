use thiserror::Error;

/// Errors surfaced by the core pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path} at row {row}: expected {expected} columns, found {found}")]
    RaggedRows {
        path: String,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("format error in {path} at row {row}, column {col}: {message}")]
    BadCell {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("insufficient rows: need at least {required} timesteps, got {got}")]
    InsufficientRows { required: usize, got: usize },

    #[error("mask shape mismatch for tensor `{tensor}`: expected {expected:?}, got {got:?}")]
    MaskShape {
        tensor: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
