//! Monte Carlo estimators for first and second derivatives of heat semigroups
//! and log heat kernels, built on horizontal Brownian motion in the orthonormal
//! frame bundle.
//!
//! The generator is ½Δ throughout.

pub mod cutoff;
pub mod error;
pub mod estimators;
pub mod frame_sde;
pub mod functionals;
pub mod geometry;
pub mod harness;
pub mod oracles;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
