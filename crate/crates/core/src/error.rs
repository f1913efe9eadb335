use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, sizes or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order (for example backward without a matching forward).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite gradient in parameter block `{block}` at index {index}: {value}")]
    NonFiniteGradient {
        block: String,
        index: usize,
        value: f64,
    },

    #[error("non-finite value in parameter block `{block}` at index {index} after update")]
    NonFiniteValue { block: String, index: usize },

    /// A numerical property check failed; carries the offending configuration.
    #[error("bound violation: {0}")]
    BoundViolation(String),

    #[error("metric `{0}` not present")]
    MissingMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
