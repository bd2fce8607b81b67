//! Reverse-mode differentiation over dense `f64` arrays, plus the layers,
//! optimizer and checkpoint format the network is built from.

pub(crate) mod gemm;
mod params;
mod tape;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod optim;

pub use params::{ParamEntry, ParamStore};
pub(crate) use tape::gelu_scalar;
pub use tape::{conv_padding, Diagnostics, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward needs a single-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{0}` is frozen")]
    Frozen(String),
}
