//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each primitive as it executes. Leaves are created with
//! [`Tape::param`] (trainable) or [`Tape::constant`]; ops return [`Var`]
//! handles, and [`Tape::backward`] on a scalar yields [`Gradients`].
//! Every forward op rejects non-finite results instead of propagating them.

mod ops;
mod tape;
mod tensor;

pub mod gradcheck;

pub use ops::{BatchStats, NORM_EPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
