//! Stationary states of nonlocal Fokker-Planck-type equations.
//!
//! The stationary PDE is recast as a fixed-point problem `T u = u` and solved
//! with a matrix-free Newton-Krylov method; on top of that sit continuation
//! in the interaction strength, critical-threshold bisection, and a
//! mass-preserving time stepper used to probe branch stability.

pub mod conv;
pub mod kernels;
pub mod models;
pub mod reference;
pub mod solver;
pub mod error;
pub mod grid;
pub mod spline;

pub use error::{Error, Result};
pub use grid::{field_norm, integrate, norm, Axis, Field, GridSpec, NormP, Topology};
