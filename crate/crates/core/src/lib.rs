//! Near-best regularization of rough functionals (point and line sources,
//! irregular densities) by projection in discrete negative Sobolev norms,
//! and adaptive PDE solves driven by the regularized sources.
//!
//! The main entry points are [`mixed::solve_projection`] for a single
//! projection, [`adapt::adaptive_project`] for the adaptive loop and
//! [`pde::run_two_stage`] for the two-stage regularize-then-solve driver.

pub mod adapt;
pub mod duality;
pub mod error;
pub mod femspace;
pub mod fortin;
pub mod functional;
pub mod instability;
mod linalg;
pub mod mesh;
pub mod mixed;
pub mod pde;
pub mod persistence;
pub mod quadrature;
pub mod rates;
pub mod studies;

pub use error::{Error, Result};
