use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("decode error: {0}")]
    Decode(String),
    #[error("modality error: {0}")]
    Modality(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("input too small: {0}")]
    Size(String),
    #[error("zero descriptor: {0}")]
    ZeroDescriptor(String),
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("mining error: {0}")]
    Mining(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("sample error: {0}")]
    Sample(String),
    #[error("whitening error: {0}")]
    Whitening(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
