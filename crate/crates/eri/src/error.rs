//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EriError {
    /// Tensor shape mismatch; names both offending shapes.
    #[error("shape mismatch: {context}: {lhs:?} vs {rhs:?}")]
    Shape {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid argument to an operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),

    /// Bad input data (labels, manifests, missing files).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary file; reports the byte offset of the problem.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },

    /// Optimizer / training state error (e.g. missing gradients).
    #[error("state error: {0}")]
    State(String),

    /// Numerical failure (NaN/Inf loss or activation).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Evaluation cannot proceed (e.g. no valid samples).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EriError {
    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        EriError::Shape {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data/format, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            EriError::Config(_) | EriError::Argument(_) => 1,
            EriError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, EriError>;
