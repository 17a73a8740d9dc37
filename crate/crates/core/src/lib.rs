//! Systemic risk measures with random allocations: scenario generation,
//! aggregation utilities, a closed-form oracle for paired exponential
//! utilities, and neural primal and dual solvers.

pub mod analytic;
pub mod config;
pub mod dual;
pub mod error;
pub mod eval;
pub mod nn;
pub mod primal;
pub mod scenario;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
