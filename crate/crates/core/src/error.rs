//! Crate-wide error type.
//!
//! Everything fallible in the crate returns [`Result`]. Shape problems,
//! bad configuration values and data-format violations each get their own
//! variant so callers can match on the failure class instead of parsing
//! message strings.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor did not have the shape an operation required.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward or backward pass produced NaN or infinity.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// `backward` was called on a layer that has no cached forward pass.
    #[error("backward called on {layer} without a preceding train-mode forward")]
    NoForwardCache { layer: &'static str },

    /// An argument violated a documented precondition.
    #[error("invalid argument for {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// A budget distribution, exit schedule or weighting scheme was malformed.
    #[error("invalid budget specification: {0}")]
    Budget(String),

    /// Network construction failed (attach points, head kinds, shapes).
    #[error("invalid network architecture: {0}")]
    Architecture(String),

    /// Training aborted because the loss blew up or became non-finite.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// A dataset file was malformed (bad magic, truncation, label range).
    #[error("bad data file {path}: {detail}")]
    DataFormat { path: String, detail: String },

    /// A checkpoint file was malformed or does not match the network.
    #[error("bad checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },

    /// A configuration file could not be parsed or failed validation.
    #[error("bad config: {0}")]
    Config(String),

    /// The source is Displayed here rather than chained, so wrappers
    /// that print error chains do not repeat it.
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn data(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        Error::DataFormat { path: path.as_ref().display().to_string(), detail: detail.into() }
    }

    pub(crate) fn checkpoint(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        Error::Checkpoint { path: path.as_ref().display().to_string(), detail: detail.into() }
    }
}
