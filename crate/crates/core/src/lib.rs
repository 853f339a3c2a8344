//! Finite-element toolkit for weighted (p,q)-Laplacian eigenvalue problems
//! with the spectral parameter in the equation and in the boundary
//! condition, and for the associated nonresonant boundary-value problems.

pub mod cli;
pub mod error;
pub mod expr;
pub mod forms;
pub mod functionals;
pub mod mesh;
pub mod nonlinear;
pub mod optimize;
pub mod quadrature;
pub mod spectrum;

pub use error::{Error, Result};
