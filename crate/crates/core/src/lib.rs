//! Differentiable frame aggregation (NetVLAD, GhostVLAD, AttentionVLAD) and
//! multi-modal fusion (concatenation, MMA, MLMA) for set-based person
//! recognition, with the training loop, synthetic data and retrieval metrics
//! needed to exercise them end to end.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, reports and
//! the command-line driver live in the `famf` crate.

#![no_std]

extern crate alloc;

pub mod aggregation;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod pipeline;
pub mod training;

pub use autodiff::{Gradients, Tape, Tensor, Var};
pub use error::{Error, Result};
