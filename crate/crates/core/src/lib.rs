//! Numerical toolkit for one-dimensional quasi-periodic Schrödinger
//! operators: frequency arithmetic, discrepancy of Kronecker orbits,
//! transfer matrices and Lyapunov exponents, finite-box Green's functions
//! and wave-packet transport moments.

pub mod arithmetic;
pub mod discrepancy;
pub mod dynamics;
pub mod linalg;
pub mod operator;
pub mod spectral;
pub mod error;
pub mod green;

pub use error::{Error, Result};
