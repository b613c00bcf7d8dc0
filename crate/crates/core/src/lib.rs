//! Numerical and simulation toolkit for supercritical splitting trees with
//! neutral Poissonian mutations under the infinitely-many-alleles model.
//!
//! The crate computes the scale functions `W` and `W_theta`, the
//! frequency-spectrum constants `c_k` and their moments, simulates coalescent
//! point processes and forward branching populations, and runs the Monte
//! Carlo experiments that check the central limit theorems for the spectrum.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod lifetimes;
pub mod numerics;
pub mod rng;
pub mod scalefn;
pub mod simulator;
pub mod spectrum;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use lifetimes::LifetimeModel;
pub use scalefn::{GridSpec, ModelParams, ScaleFunctions, ScaleTable};
