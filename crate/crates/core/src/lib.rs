//! Waveform design and validation for OFDM dual-function radar-communication.
//!
//! The crate is organized around the life of one experiment:
//!
//! - [`grid`] — OFDM block geometry, steering vectors, and the discrete
//!   ambiguity function of a power allocation.
//! - [`waveform`] — the transmit chain (IDFT + cyclic prefix), target echo
//!   synthesis, and the 2D-FFT maximum-likelihood delay-Doppler bin estimator.
//! - [`metrics`] — outlier-probability analytics (simulated and analytic) and
//!   the communication rate, for both constant-magnitude and Gaussian symbol
//!   distributions.
//! - [`solvers`] — the optimization primitives shared by the waveform
//!   designers: a magnitude prox map, a dense convex QP solver, and a
//!   rate-constrained water-filling bisection.
//! - [`opt`] — the waveform optimizers themselves plus the baseline
//!   allocations used for comparison.

pub mod grid;
pub mod metrics;
pub mod opt;
pub mod solvers;
pub mod waveform;

pub use grid::{
    ambiguity, doppler_phase_vector, epsilon_samples, range_phase_vector, AfValue,
    DelayDopplerBin, FractionalDoppler, GridError, OfdmConfig, PowerGrid,
};
pub use metrics::{
    achievable_rate, aubop, mean_peak_magnitude, op_bessel_approx, pairwise_second_moment,
    simulate_op, ubop, CommChannel, ExperimentResult, GaussianInput, MetricsError, SymbolSource,
};
pub use opt::{
    baseline_allocation, baseline_gaussian, optimize_decoupled, optimize_gaussian, optimize_psk,
    BaselineKind, GaussianSolution, OptError, OptimizerOptions, PskSolution,
};
pub use solvers::{
    capacity_waterfill, prox_scaled_magnitude, solve_qp, solve_qp_from, waterfill_bisection,
    QpProblem, QpSolution, RateConstraint, SolverError, WaterfillSolution,
};
pub use waveform::{
    demodulate, ml_estimate, modulate, synthesize_echo, EchoParams, MlEstimator, SymbolGrid,
    WaveformError,
};
