//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles; calling
//! [`Tape::backward`] on a scalar walks the records in reverse and returns the
//! gradient of that scalar with respect to every recorded value.

pub mod check;
pub mod kernels;
mod loss;
mod tape;
mod tensor;

pub use loss::smooth_l1_value;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
