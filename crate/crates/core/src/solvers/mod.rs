//! Reusable optimization primitives shared by the waveform designers.
//!
//! - [`prox_scaled_magnitude`] — entrywise minimizer of a weighted magnitude
//!   plus a quadratic pull toward a complex anchor.
//! - [`solve_qp`] — a dense primal active-set solver for convex quadratic
//!   programs with bounds and a small number of general inequality rows.
//! - [`waterfill_bisection`] — the three-branch KKT closed form for
//!   rate-constrained variance allocation, with a bisection multiplier.

mod prox;
mod qp;
mod waterfill;

pub use prox::prox_scaled_magnitude;
pub use qp::{solve_qp, solve_qp_from, QpProblem, QpSolution};
pub use waterfill::{capacity_waterfill, waterfill_bisection, RateConstraint, WaterfillSolution};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("rho must be strictly positive, got {0}")]
    NonpositiveRho(f64),
    #[error("input lengths disagree: {0}")]
    BadInput(String),
    #[error("Hessian is not symmetric: |H[{i}][{j}] - H[{j}][{i}]| = {diff}")]
    AsymmetricHessian { i: usize, j: usize, diff: f64 },
    #[error("Hessian is not positive semidefinite (pivot {pivot} at column {col})")]
    NotPositiveDefinite { col: usize, pivot: f64 },
    #[error("no feasible point found: {0}")]
    Infeasible(String),
    #[error("rate target {target} bits/s/Hz unreachable; maximum achievable is {achievable}")]
    InfeasibleRate { target: f64, achievable: f64 },
    #[error("iteration limit reached in {0}")]
    IterationLimit(String),
}
