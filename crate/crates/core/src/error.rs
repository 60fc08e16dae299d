use thiserror::Error;

/// Errors raised across the simulation and postprocessing stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("frame mismatch: alice frame {alice}, bob frame {bob}")]
    FrameMismatch { alice: u64, bob: u64 },

    #[error("degenerate estimation: {0}")]
    Degenerate(String),

    #[error("synchronisation lost: correlation peak {peak:.3} below threshold {threshold:.3}")]
    SyncLost { peak: f64, threshold: f64 },

    #[error("unsatisfiable socket constraints: {0}")]
    Unsatisfiable(String),

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
