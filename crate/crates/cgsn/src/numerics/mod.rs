//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: row-major [`Tensor`] storage, a
//! [`Value`] handle that records operations onto a per-forward-pass
//! [`Tape`], and an AdamW optimizer. Everything runs in 64-bit floats so
//! gradient checks against central finite differences are meaningful.
//! Values are immutable once created; a tape belongs to one training
//! context at a time and is rebuilt on every forward pass.

pub mod adam;
pub mod mem;
mod tape;
mod tensor;
mod value;


pub use adam::{AdamHyper, AdamState};
pub use tape::{Gradients, Tape};
pub use tensor::Tensor;
pub use value::{backward, Mask, Value};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("softmax over an empty axis (shape {shape:?})")]
    EmptyAxis { shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward requires a tape-recorded loss")]
    LossNotRecorded,
    #[error("values belong to different tapes")]
    TapeMismatch,
    #[error("row index {index} out of bounds for {rows} rows")]
    RowIndex { index: usize, rows: usize },
    #[error("pooling group {group} is empty")]
    EmptyGroup { group: usize },
    #[error("slice {start}..{end} out of bounds for {len}")]
    BadSlice { start: usize, end: usize, len: usize },
    #[error("optimizer state step {state} does not match {params} parameters")]
    OptimizerMismatch { state: usize, params: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
