//! Dense n-dimensional tensors with tape-based reverse-mode automatic
//! differentiation.
//!
//! Every operation produces a new immutable [`Tensor`]. When any input
//! requires a gradient, the result also records a backward rule and the
//! inputs it came from, which together form the tape walked by
//! [`Tensor::backward`]. Gradients accumulate into leaf tensors until they
//! are explicitly cleared.
//!
//! Two element types are supported through [`Element`]: `f64` for gradient
//! checking and `f32` for training.

mod element;
mod error;
pub mod gradcheck;
mod kernels;
pub mod ops;
mod tensor;
pub mod testing;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use ops::conv::Conv2dOptions;
pub use tensor::{is_grad_enabled, no_grad, BackwardFn, Tensor};
