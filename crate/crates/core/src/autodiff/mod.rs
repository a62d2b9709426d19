//! Dense reverse-mode differentiation.
//!
//! Every forward pass records onto a fresh [`Tape`]. Parameters live in a
//! [`ParamSet`] outside the tape; they are bound as leaves for each pass and
//! gradients are accumulated back into their buffers after [`Tape::backward`].

mod adam;
mod gradcheck;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{fd_gradient, max_relative_error, relative_error};
pub use params::{BoundParams, ParamSet};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("tensor data length {got} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, got: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter `{name}` has no gradient buffer")]
    MissingGradient { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParameter { name: String },
    #[error("duplicate parameter `{name}`")]
    DuplicateParameter { name: String },
    #[error("loss is non-finite when perturbing `{name}`[{index}]")]
    NonFiniteProbe { name: String, index: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
