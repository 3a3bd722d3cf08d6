//! Finite-dimensional Galerkin toolkit for Fokker-Planck-Kolmogorov
//! equations on a Gelfand triple: test functions and the Kolmogorov
//! operator, coefficient checkers, grid and particle FPKE solvers,
//! martingale diagnostics, superposition verification, McKean-Vlasov
//! Picard iteration and a spectral stochastic Navier-Stokes example.

pub mod coefficients;
pub mod container;
pub mod error;
pub mod fpke;
pub mod martingale;
pub mod mckean_vlasov;
pub mod reference;
pub mod snse;
pub mod rng;
pub mod space;
pub mod superposition;

pub use error::{Error, Result};
