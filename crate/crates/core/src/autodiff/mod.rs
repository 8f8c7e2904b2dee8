//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records each operation as it runs. [`Tape::backward`] walks the
//! record in reverse and returns a [`Gradients`] table for every input created
//! with [`Tape::leaf`].

pub mod check;
mod matrix;
mod rng;
mod tape;

pub use matrix::{Matrix, Scalar};
pub use rng::RngStream;
pub use tape::{CsrMatrix, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward requires a 1x1 loss, got {shape:?}")]
    NotScalarLoss { shape: (usize, usize) },
    #[error("tape has already been swept")]
    TapeConsumed,
    #[error("variable belongs to a different tape")]
    ForeignTensor,
    #[error("segment {0} is empty")]
    EmptySegment(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
