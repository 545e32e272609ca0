//! Waveform optimizers and the baseline allocations used for comparison.
//!
//! Three designers live here:
//! - [`optimize_psk`] — symbol-power shaping for constant-magnitude inputs by
//!   ADMM with an inner successive-convex r-update (uniform subcarrier
//!   spreading is optimal for this scheme and is applied on output).
//! - [`optimize_gaussian`] — block coordinate descent over the second moments
//!   and variances of a Gaussian input under an achievable-rate constraint.
//! - [`optimize_decoupled`] — the low-complexity variant that reuses the PSK
//!   symbol profile across time and optimizes a common per-subcarrier
//!   distribution, shrinking the variable count from 4KM to M + 4K.

mod baseline;
mod decouple;
mod gaussian;
mod psk;
mod steering;

pub use baseline::{baseline_allocation, baseline_gaussian, BaselineKind};
pub use decouple::optimize_decoupled;
pub use gaussian::{optimize_gaussian, GaussianSolution};
pub use psk::{optimize_psk, PskSolution};

use crate::grid::GridError;
use crate::metrics::MetricsError;
use crate::solvers::SolverError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid optimizer input: {0}")]
    BadInput(String),
}

/// Shared optimizer knobs. Every field round-trips through the experiment
/// config file as an `optimizer.*` key.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Outer iteration cap for the ADMM symbol-power designer.
    pub admm_max_iters: usize,
    /// Outer iteration cap for the Gaussian block coordinate descent.
    pub bcd_max_iters: usize,
    /// Inner successive-convex iteration cap shared by all designers.
    pub scp_max_iters: usize,
    /// Relative stopping tolerance (the eps_S of the outer loops).
    pub rel_tol: f64,
    /// KKT tolerance handed to the QP solver.
    pub qp_tol: f64,
    /// ADMM penalty; `None` picks a scale-aware default.
    pub rho: Option<f64>,
    /// Residual-balancing adaptation of the ADMM penalty. Off by default:
    /// rescaling the scaled dual interacts badly with the magnitude prox when
    /// whole rows sit at zero.
    pub adapt_rho: bool,
    /// Kaiser window shape parameter for the baseline allocation.
    pub kaiser_beta: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            admm_max_iters: 500,
            bcd_max_iters: 200,
            scp_max_iters: 100,
            rel_tol: 1e-4,
            qp_tol: 1e-9,
            rho: None,
            adapt_rho: false,
            kaiser_beta: 6.0,
        }
    }
}
