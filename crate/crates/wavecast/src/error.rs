//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A simulation produced a non-finite field or left the physical regime.
    #[error("integration diverged at t={t}s{}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Diverged { t: f64, frame: Option<usize> },

    /// Invalid or degenerate numeric parameters.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Tensor shape incompatibility, naming the op and both shapes.
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// Malformed configuration file or value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed data file (dataset, checkpoint, norm stats).
    #[error("format error: {0}")]
    Format(String),

    /// Normalization is undefined for constant data.
    #[error("normalization std is zero (constant data)")]
    StdZero,

    /// A dataset split required by the operation is empty or missing.
    #[error("empty or missing split: {0}")]
    EmptySplit(String),

    /// Training loss became non-finite.
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    /// Operation not supported by the given architecture.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Machine-parseable category used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Diverged { .. } | Error::NonFiniteLoss { .. } => "numeric",
            Error::InvalidParam(_) | Error::Config(_) => "config",
            Error::ShapeMismatch { .. } | Error::Unsupported(_) => "usage",
            Error::Format(_) | Error::StdZero | Error::EmptySplit(_) | Error::Io(_) => "data",
        }
    }
}
