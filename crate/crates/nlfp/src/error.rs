//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("axis {axis}: composite Simpson requires an odd number of nodes, got {n}")]
    EvenPoints { axis: usize, n: usize },

    #[error("axis {axis}: expected periodic topology for this operation")]
    NotPeriodic { axis: usize },

    #[error("fields live on different grids: {context}")]
    GridMismatch { context: String },

    #[error("domain bounds do not match: {context}")]
    DomainMismatch { context: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid problem setup: {0}")]
    InvalidProblem(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("argument outside domain of (H')^-1: {0}")]
    DiffusionDomain(String),

    #[error("GMRES did not converge: residual {residual:.3e} after {iterations} iterations")]
    GmresStagnation { residual: f64, iterations: usize },

    #[error("Newton iteration aborted: {0}")]
    NewtonAbort(String),

    #[error("bisection bracket invalid: {0}")]
    BracketInvalid(String),

    #[error("scalar root solve failed: {0}")]
    ScalarSolve(String),

    #[error("time stepper violated a scheme property: {0}")]
    SchemeViolation(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
