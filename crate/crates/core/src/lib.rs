//! Forward and inverse-stability toolkit for Helmholtz scattering by penetrable
//! convex polytopes: geometry, special functions, grids, a Lippmann–Schwinger
//! solver, far-field to boundary propagation bounds, complex geometrical optics
//! solutions and the corner-scattering stability experiments built on them.

pub mod cgo;
pub mod error;
pub mod fft;
pub mod fields;
pub mod geom;
pub mod krylov;
pub mod rellich;
pub mod solver;
pub mod specfun;
pub mod stability;

pub use error::{Error, Result};
pub use num_complex::Complex64;
