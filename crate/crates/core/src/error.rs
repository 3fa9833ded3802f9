use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("scenario construction failed: {0}")]
    Scenario(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("stream cache: {0}")]
    Cache(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Parse failures for IDX files.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("wrong magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { path: String, expected: u32, found: u32 },
    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: String,
        needed: usize,
        found: usize,
    },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}
