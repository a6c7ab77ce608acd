//! Derivative-free Levenberg-Marquardt for nonlinear least squares problems
//! whose Jacobian rows are sparse with an unknown pattern.
//!
//! Every iteration draws a random `p × n` sensing matrix, evaluates the
//! residual map at `p` probe points around the current iterate and recovers
//! each Jacobian row by ℓ1 minimization (basis pursuit). The recovered model
//! drives a Levenberg-Marquardt step with an adaptive regularization weight.
//!
//! Modules:
//!
//! - [`sensing`]: random interpolation-direction matrices and RIP diagnostics.
//! - [`recovery`]: basis pursuit / basis pursuit denoising solvers and a
//!   brute-force support-enumeration oracle.
//! - [`model`]: interpolation sets and Jacobian model assembly.
//! - [`lm`]: the solver loop, its update rules and a finite-difference baseline.
//! - [`problems`]: built-in test problems and the problem registry.
//! - [`bench`]: multi-run experiments, performance profiles and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod config;
mod error;
pub mod lm;
pub mod model;
pub mod problems;
pub mod record;
pub mod recovery;
pub mod sensing;
pub mod validate;

pub use config::{PPolicy, RecoveryMode, SolverConfig};
pub use error::{Error, Result};
pub use lm::{solve, solve_fd_baseline};
pub use problems::{Problem, Registry};
pub use record::{IterationRecord, RunRecord, StopReason};
pub use sensing::{Distribution, SensingMatrix};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
