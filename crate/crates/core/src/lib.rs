//! Numerical toolkit for almost-sure central limit theorems of Gaussian
//! functionals.
//!
//! The crate is organised bottom-up:
//!
//! * [`covariance`]: stationary unit-variance autocovariance models (fGn, iid, tables).
//! * [`sim`]: exact stationary Gaussian sampling (circulant embedding / Cholesky)
//!   and fractional Brownian motion on dyadic grids.
//! * [`hermite`]: Hermite polynomials, Gauss–Hermite quadrature and chaos expansions.
//! * [`sequences`]: normalized functional sequences `G_1..G_n` and their exact covariances.
//! * [`kernels`]: discrete Wiener-chaos kernels, contractions and their norms.
//! * [`malliavin`]: pathwise Malliavin functionals and the characteristic-function bound.
//! * [`asclt`]: log-averaged empirical measures, KS distances, `Δ_n(t)` and criteria diagnostics.

pub mod asclt;
pub mod covariance;
mod error;
pub mod hermite;
pub mod kernels;
pub mod malliavin;
pub mod numerics;
pub mod sequences;
pub mod sim;

pub use error::{Error, Result};
