//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Errors raised by tensor operations, models, data loading and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible, or an index/slice is out of bounds.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value lies outside the domain of an elementwise function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix is numerically singular.
    #[error("singular matrix: {detail} (hint: {hint})")]
    Singular { detail: String, hint: &'static str },

    /// A problem is too large for a brute-force routine.
    #[error("problem too large: {0}")]
    Scale(String),

    /// An index (class, component) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// Invalid configuration or preconditions on inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// A fitted mixture component collapsed.
    #[error("degenerate component: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed but its content violates the expected format.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn singular(detail: impl Into<String>) -> Self {
        Error::Singular {
            detail: detail.into(),
            hint: "add a small diagonal damping term (e.g. 1e-3)",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable code for the error category, e.g. `E_SHAPE`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "E_SHAPE",
            Error::Domain(_) => "E_DOMAIN",
            Error::Singular { .. } => "E_SINGULAR",
            Error::Scale(_) => "E_SCALE",
            Error::Index(_) => "E_INDEX",
            Error::Config(_) => "E_CONFIG",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::Diverged { .. } => "E_DIVERGED",
            Error::Io { .. } => "E_IO",
            Error::Format(_) => "E_FORMAT",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
