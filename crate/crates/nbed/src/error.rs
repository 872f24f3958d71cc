use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; the message names the violated field or invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor/array shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Dataset ingestion problem (list files, images, ground truths).
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint or named-array container problem.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Non-finite values or other numeric failures at runtime.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
