use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing view (row {row}, col {col}) in {dir}")]
    MissingView { dir: PathBuf, row: usize, col: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },

    #[error("content digest mismatch (file truncated or corrupted)")]
    Digest,

    #[error("malformed header: {0}")]
    Header(String),

    #[error("config mismatch on `{field}`: file has {found}, expected {expected}")]
    ConfigMismatch {
        field: String,
        found: String,
        expected: String,
    },

    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),

    #[error("checkpoint has unexpected parameter `{0}`")]
    UnexpectedParameter(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
