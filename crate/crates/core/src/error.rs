use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A caller supplied an argument that violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor or raster shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or infinity reached a layer boundary, a loss, or a gradient.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Scene placement ran out of retries.
    #[error("unplaceable: {0}")]
    Unplaceable(String),

    /// Training or evaluation data is empty or malformed.
    #[error("dataset: {0}")]
    Dataset(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
