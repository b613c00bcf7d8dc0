//! Numerical building blocks: quadrature, interpolation, Laplace inversion,
//! special functions and sample statistics.

pub mod interp;
pub mod inversion;
pub mod quadrature;
pub mod special;
pub mod stats;

pub use interp::Pchip;
pub use inversion::EulerInversion;
pub use quadrature::{integrate_adaptive, quad, GaussLegendre, Integral};
pub use stats::Estimate;
