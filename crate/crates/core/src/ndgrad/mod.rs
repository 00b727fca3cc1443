//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
pub mod ops;
mod param;
mod tape;
mod tensor;

pub use check::{finite_difference_gradient, relative_error};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {found} elements")]
    InvalidShape { shape: Vec<usize>, found: usize },
    #[error("expected a 1-D or 2-D tensor, got shape {shape:?}")]
    Rank { shape: Vec<usize> },
    #[error("slice {start}..{end} out of range for width {width}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        width: usize,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("{op} produced a non-finite value from finite inputs")]
    NonFinite { op: &'static str },
}
