//! Double-precision differentiable primitives: dense matrices, a reverse-mode
//! gradient tape over matrix operations, and a finite-difference checker.
//!
//! Every training loss in this crate is assembled from the primitives
//! registered here, so a gradient bug anywhere surfaces in [`grad_check`].

mod check;
mod matrix;
mod tape;

pub use check::{grad_check, GradCheckReport};
pub use matrix::{cosine_similarity_matrix, l2_normalize_rows, softmax_rows, Matrix};
pub use tape::{value_and_gradient, NodeId, Tape};

/// Errors raised by the numerical layer.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row {row} has near-zero norm {norm:e}")]
    ZeroRow { row: usize, norm: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("computation output is {rows}x{cols}, expected a 1x1 scalar")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("invalid {name} for gradient check: {value}")]
    InvalidCheckParameter { name: &'static str, value: f64 },
}
