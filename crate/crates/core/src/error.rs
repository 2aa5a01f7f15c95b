use thiserror::Error;

/// Errors raised anywhere in the engine, model, data and experiment layers.
#[derive(Debug, Error)]
pub enum TecoError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TecoError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        TecoError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn arg(op: &'static str, msg: impl Into<String>) -> Self {
        TecoError::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TecoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line harness.
    ///
    /// 2 for configuration/usage problems, 3 for data problems, 4 for
    /// numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            TecoError::Config(_) | TecoError::Usage(_) => 2,
            TecoError::Divergence(_) => 4,
            TecoError::Shape { .. }
            | TecoError::InvalidArgument { .. }
            | TecoError::Degenerate(_)
            | TecoError::Data(_)
            | TecoError::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = TecoError> = std::result::Result<T, E>;
