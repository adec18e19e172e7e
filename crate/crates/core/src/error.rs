use thiserror::Error;

use crate::mesh::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("element {element} is degenerate (measure {measure:e})")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("no quadrature rule of order {order} in dimension {dim}")]
    UnsupportedQuadrature { dim: usize, order: usize },

    #[error("trial space is empty: the mesh has no interior vertex")]
    EmptyTrialSpace,

    #[error("point ({}, {}) lies outside the meshed domain", .0[0], .0[1])]
    OutOfDomain(Point),

    #[error("point ({}, {}) is a singular point of the exact solution", .0[0], .0[1])]
    SingularPoint(Point),

    #[error("incompatible pair: dim G = {trial} exceeds dim V = {test}")]
    IncompatiblePair { trial: usize, test: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("Newton iteration did not converge at p = {p} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        p: f64,
        iterations: usize,
        residual: f64,
        /// Best residual representative reached, in test-space coefficients.
        best_r: Vec<f64>,
        /// Trial coefficients paired with `best_r`.
        best_f: Vec<f64>,
    },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("incompatible file version {found} (expected {expected})")]
    IncompatibleVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
