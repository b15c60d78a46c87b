//! Parabolic homogenization toolkit for locally periodic coefficients
//! `A(x, t; x/eps, t/eps^2)`: periodic cell problems on the torus, effective
//! coefficients, parabolic flux correctors, macroscopic smoothing operators,
//! corrected two-scale expansions, reference theta-scheme solvers, and
//! convergence-rate studies.

pub mod error;
pub mod fields;
pub mod linsolve;

pub use error::{Error, Result};

pub mod cell;

#[cfg(test)]
pub(crate) mod testutil;
pub mod effective;
pub mod smoothing;
pub mod study;
pub mod solvers;
