//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! The engine is deliberately small: row-major [`Tensor`] storage, a
//! [`Tape`] that records operations on [`Var`]s, named [`ParameterSet`]s
//! with deterministic initialization, and a finite-difference
//! [`grad_check`]. Storage is generic over [`Scalar`] so the same model code
//! runs in `f32` for training and in `f64` for gradient verification.
//!
//! Reductions (sums, means, softmax normalizers, layer-norm statistics)
//! accumulate in `f64` regardless of the storage type.

mod error;
pub mod gradcheck;
pub mod nn;
mod ops;
pub mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_typed, GradCheckConfig, GradCheckReport};
pub use params::{init_parameters, Init, ParamSpec, ParamVars, ParameterSet};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
