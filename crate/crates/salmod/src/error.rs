//! One error type for the whole crate. Contract violations are reported as
//! errors, not panics, so callers (CLI, tests) can surface them cleanly.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape algebra violation (rank/extent mismatch, out-of-range index...).
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed computation graph (non-scalar loss, foreign node id...).
    #[error("graph error: {0}")]
    Graph(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset construction or ingestion problem.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed file content (netpbm, checkpoint, CSV...).
    #[error("format error: {0}")]
    Format(String),

    /// Training produced non-finite values.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn graph(msg: impl Into<String>) -> Self {
        Error::Graph(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
