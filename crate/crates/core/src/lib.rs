//! Gaussian variational inference and Laplace approximations to posteriors
//! π ∝ e^{-n·v}, with Hermite-series correction terms and dense-grid
//! ground-truth oracles for measuring true approximation errors.
//!
//! The crate is organized around the pipeline
//! potential -> fit (Laplace / canonical VI) -> oracle -> diagnostics,
//! plus the logistic-regression error-scaling benchmark that drives all of
//! it end to end.

pub mod bench;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod hermite;
pub mod oracle;
pub mod potential;
pub mod quadrature;
pub mod tensor;
pub(crate) mod util;

pub use error::{GviError, Result};
