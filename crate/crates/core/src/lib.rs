//! Deformation quantization toolkit for parametrized Hamiltonian systems.
//!
//! The symbolic layer ([`symbol`], [`moyal`], [`covariant`], [`distributions`],
//! [`parametrized`]) is exact: coefficients are Gaussian rationals times
//! Laurent monomials in `hbar`, `pi` and model parameters. The numerical layer
//! ([`grid`]) samples quasidistributions and propagates them under Moyal or
//! Liouville dynamics.

pub mod covariant;
pub mod distributions;
pub mod error;
pub mod grid;
pub mod rational;
pub mod moyal;
pub mod parametrized;
pub mod symbol;

pub use error::{Error, Result};
pub use rational::{Coefficient, Rational};
pub use symbol::{Monomial, PhaseSpace, Symbol};
