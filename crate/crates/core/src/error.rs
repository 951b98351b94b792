use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error(
        "cholesky factorization failed at pivot {pivot} (value {value:e}); \
         the regularized Hessian is numerically singular, raise the damping delta"
    )]
    Factorization { pivot: usize, value: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format version {found} (supported: {supported:?})")]
    Version { found: u16, supported: Vec<u16> },

    #[error("decode error in layer '{layer}': {message}")]
    Decode { layer: String, message: String },

    #[error("no calibration activations for layer '{0}' (expected entry '{0}.activations')")]
    MissingActivations(String),

    #[error("search space of {size} assignments exceeds the brute-force limit {limit}")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn decode(layer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Decode {
            layer: layer.into(),
            message: msg.into(),
        }
    }

    /// Whether the failure is attributable to user input (files, flags) rather
    /// than to a numerical breakdown inside the compressor.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Factorization { .. } | Error::Singular | Error::NonFinite { .. }
        )
    }
}
