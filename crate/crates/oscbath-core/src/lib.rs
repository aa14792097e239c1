//! Numerics for an oscillator coupled linearly to a thermal Bose field.
//!
//! Radial momentum space is discretized on composite Gauss-Legendre panels. On top of
//! that sit the dispersion function and its resonance, the scattering operators, the
//! symplectic map to the free field, Gaussian equilibrium correlations and the Dyson
//! expansion for an anharmonic perturbation.

// `!(x > 0.0)` is used to reject NaN; quadrature constants keep their published digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod dyson;
pub mod equilibrium;
pub mod error;
pub mod formfactor;
pub mod quad;
pub mod radial;
pub mod scattering;
pub mod spectral;
pub mod symplectic;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);
