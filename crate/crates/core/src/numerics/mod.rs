//! Dense tensors, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Values are plain [`Tensor`]s. A [`Tape`] is built per forward pass: inputs
//! and parameters are placed on it as [`Var`] handles, every operation records
//! enough state to run its vector-Jacobian product, and [`Tape::backward`]
//! walks the records in reverse. The tape is dropped after gradients have been
//! read out; no graph outlives a training step.

mod adam;
pub(crate) mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::{ParamStore, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(NumericsError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// Tolerance used when checking that a target distribution row sums to one.
pub(crate) fn stochastic_tol<S: Scalar>() -> f64 {
    (S::epsilon().as_f64() * 64.0).max(1e-9)
}
