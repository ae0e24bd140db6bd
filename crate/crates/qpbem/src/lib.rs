//! Isogeometric Galerkin boundary element method for time-harmonic
//! electromagnetic scattering by doubly-periodic multilayer dielectrics.
//!
//! Interfaces are periodic B-spline surfaces, the surface currents are
//! expanded in quasi-periodic divergence-conforming B-spline bases, and the
//! periodic Green's function is evaluated with Ewald's method. The PMCHWT
//! system is assembled densely and solved by LU.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod assembly;
pub mod basis;
pub mod bspline;
mod error;
pub mod geometry;
pub mod greens;
pub mod linalg;
pub mod math;
mod par;
pub mod quadrature;
pub mod reference;
pub mod special;

pub use error::{Error, Result};
pub use num_complex::Complex64;
