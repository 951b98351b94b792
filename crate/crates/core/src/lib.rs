//! Post-training weight compression that minimizes a layer-wise
//! rate-distortion objective: rate-aware grid search interleaved with
//! entropy-regularized Optimal Brain Surgeon updates, followed by range coding
//! under an autoregressive entropy model.

pub mod engine;
pub mod entropy;
pub mod error;
pub mod fixture;
pub mod grid;
pub mod linalg;
pub mod matrix;
pub mod model_io;
pub mod oracle;
pub mod pipeline;
pub mod range_coder;
pub mod sweep;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
