//! File formats, reports, the ablation runner and the command
//! implementations behind the `famf` binary. The numerical work lives in
//! `famf-core`.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod reports;

pub use error::{Error, Result};
