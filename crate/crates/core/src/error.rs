use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tensor `{tensor}`: byte-count mismatch (expected {expected} bytes, found {actual})")]
    ByteCount {
        tensor: String,
        expected: usize,
        actual: usize,
    },

    #[error("tensor `{tensor}`: non-finite value at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("empty region of interest")]
    EmptyMask,

    #[error("labels contain a single class; both classes are required")]
    SingleClass,

    #[error("no co-occurring pixel pairs inside the region of interest")]
    NoValidPairs,

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
