use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes disagree on a specific axis.
    #[error("shape mismatch in {op}: axis {axis} has extent {got}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        axis: usize,
        got: usize,
        expected: usize,
    },

    /// An argument violated an operation precondition.
    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// A numeric failure (NaN loss, NaN gradient, divergence).
    #[error("numeric failure in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },

    /// Configuration file or flag rejected at load/validation time.
    #[error("config error: {0}")]
    Config(String),

    /// Data file missing, malformed, or inconsistent with the config.
    #[error("data error: {0}")]
    Data(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub fn numeric(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Numeric {
            op,
            msg: msg.into(),
        }
    }

    /// Process exit code class: 2 config, 3 data, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
