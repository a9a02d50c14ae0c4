//! Bayesian spatially varying coefficient regression with Gaussian-process
//! coefficient surfaces.

mod error;
pub mod diagnostics;
pub mod kernels;
pub mod likelihood;
pub mod linalg;
pub mod mcmc;
pub mod model;
pub mod parallel;
pub mod predict;
pub mod recover;
pub mod simulate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
