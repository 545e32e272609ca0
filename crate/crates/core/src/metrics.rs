//! Outlier-probability analytics and the communication rate.
//!
//! Three views of the same quantity live here, in increasing tractability:
//! the simulated outlier probability ([`simulate_op`]), the Bessel-form
//! pairwise approximation ([`op_bessel_approx`]), and the union-bound upper
//! approximation ([`ubop`]). For Gaussian symbol distributions the expectation
//! over symbol magnitudes is taken analytically, giving [`aubop`] with its
//! second-moment helpers [`pairwise_second_moment`] and
//! [`mean_peak_magnitude`].
//!
//! Conventions fixed across the crate:
//! - `sigma2` is the effective noise level `sigma_N^2 / A^2`.
//! - The union bound keeps its global 1/2, so the `sigma2 -> inf` limit of
//!   [`ubop`] is `(K_G M - 1) / 2`.
//! - Rates are in bits/s/Hz (base-2 logs).

use crate::grid::{DelayDopplerBin, FractionalDoppler, OfdmConfig, PowerGrid};
use crate::waveform::{synthesize_echo, EchoParams, MlEstimator, SymbolGrid};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sigma2 must be strictly positive, got {0}")]
    NonpositiveSigma2(f64),
    #[error("epsilon sample set is empty")]
    EmptyEpsilonSet,
    #[error("input is {found_k} x {found_m}, expected {k} x {m}")]
    DimensionMismatch {
        found_k: usize,
        found_m: usize,
        k: usize,
        m: usize,
    },
    #[error("vector has {found} entries, expected {expected}")]
    VectorLength { found: usize, expected: usize },
    #[error("second-moment radicand {value} below tolerance {tol}")]
    NegativeRadicand { value: f64, tol: f64 },
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("invalid Gaussian input: {0}")]
    InvalidGaussian(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
}

/// Modified Bessel function of the first kind, order zero, in log space.
pub mod bessel {
    /// Natural log of `I_0(x)` for `x >= 0`.
    ///
    /// Power series (40 terms) below 15; beyond that the asymptotic form
    /// `e^x / sqrt(2 pi x) (1 + 1/(8x))`, whose log never overflows.
    pub fn log_i0(x: f64) -> f64 {
        assert!(x >= 0.0, "log_i0 requires a non-negative argument");
        if x < 15.0 {
            i0_series(x).ln()
        } else {
            x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + (1.0 / (8.0 * x)).ln_1p()
        }
    }

    /// `I_0(x)` by its power series, for moderate arguments.
    pub fn i0_series(x: f64) -> f64 {
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for p in 1..=40u32 {
            term *= q / (p as f64 * p as f64);
            sum += term;
        }
        sum
    }

    /// `e^{ -a } I_0(b)`, fused in log space so large arguments never overflow.
    pub fn exp_scaled_i0(a: f64, b: f64) -> f64 {
        (log_i0(b) - a).exp()
    }
}

/// Second moments and variances of a complex asymmetric Gaussian symbol grid.
///
/// Both vectors have length `2 K M`: the real components of every cell first,
/// then the imaginary components, each block symbol-major and subcarrier-minor.
/// `sigma` holds variances, so `0 <= sigma <= pbar` elementwise and the implied
/// squared means are `pbar - sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInput {
    pbar: Vec<f64>,
    sigma: Vec<f64>,
    subcarriers: usize,
    symbols: usize,
}

impl GaussianInput {
    pub fn new(
        pbar: Vec<f64>,
        sigma: Vec<f64>,
        subcarriers: usize,
        symbols: usize,
    ) -> Result<Self, MetricsError> {
        let n = 2 * subcarriers * symbols;
        if pbar.len() != n {
            return Err(MetricsError::VectorLength {
                found: pbar.len(),
                expected: n,
            });
        }
        if sigma.len() != n {
            return Err(MetricsError::VectorLength {
                found: sigma.len(),
                expected: n,
            });
        }
        let scale: f64 = pbar.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
        let tol = 1e-8 * scale;
        let mut pbar = pbar;
        let mut sigma = sigma;
        for q in 0..n {
            if pbar[q] < 0.0 {
                if pbar[q] < -tol {
                    return Err(MetricsError::InvalidGaussian(format!(
                        "pbar[{q}] = {} is negative",
                        pbar[q]
                    )));
                }
                pbar[q] = 0.0;
            }
            if sigma[q] < 0.0 {
                if sigma[q] < -tol {
                    return Err(MetricsError::InvalidGaussian(format!(
                        "sigma[{q}] = {} is negative",
                        sigma[q]
                    )));
                }
                sigma[q] = 0.0;
            }
            if sigma[q] > pbar[q] {
                if sigma[q] > pbar[q] + tol {
                    return Err(MetricsError::InvalidGaussian(format!(
                        "sigma[{q}] = {} exceeds pbar[{q}] = {}",
                        sigma[q], pbar[q]
                    )));
                }
                sigma[q] = pbar[q];
            }
        }
        Ok(Self {
            pbar,
            sigma,
            subcarriers,
            symbols,
        })
    }

    /// Deterministic limit of a power grid: the cell power splits evenly
    /// between the real and imaginary second moments, with zero variance.
    pub fn deterministic(grid: &PowerGrid) -> Self {
        let km = grid.subcarriers() * grid.symbols();
        let mut pbar = Vec::with_capacity(2 * km);
        pbar.extend(grid.values().iter().map(|p| p / 2.0));
        pbar.extend(grid.values().iter().map(|p| p / 2.0));
        Self {
            sigma: vec![0.0; 2 * km],
            pbar,
            subcarriers: grid.subcarriers(),
            symbols: grid.symbols(),
        }
    }

    pub fn pbar(&self) -> &[f64] {
        &self.pbar
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Vector index of component `comp` (0 = real, 1 = imaginary) at cell (k, m).
    pub fn index(&self, comp: usize, k: usize, m: usize) -> usize {
        comp * self.subcarriers * self.symbols + m * self.subcarriers + k
    }

    /// Total second-moment power per cell, `pbar_R + pbar_I`.
    pub fn cell_power(&self, k: usize, m: usize) -> f64 {
        self.pbar[self.index(0, k, m)] + self.pbar[self.index(1, k, m)]
    }

    /// Implied means `mu = sqrt(pbar - sigma)`, clamped at zero.
    pub fn means(&self) -> Vec<f64> {
        self.pbar
            .iter()
            .zip(&self.sigma)
            .map(|(p, s)| (p - s).max(0.0).sqrt())
            .collect()
    }

    pub fn total_power(&self) -> f64 {
        self.pbar.iter().sum()
    }

    /// Fraction of the power budget carried by the symbol means,
    /// `sum(pbar - sigma) / sum(pbar)`.
    pub fn mean_power_fraction(&self) -> f64 {
        let total = self.total_power();
        if total == 0.0 {
            return 0.0;
        }
        let mean: f64 = self
            .pbar
            .iter()
            .zip(&self.sigma)
            .map(|(p, s)| (p - s).max(0.0))
            .sum();
        mean / total
    }
}

/// Communication channel: per-subcarrier power gains and the receiver noise
/// power density.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannel {
    gains: Vec<f64>,
    noise_density: f64,
}

impl CommChannel {
    pub fn new(gains: Vec<f64>, noise_density: f64) -> Result<Self, MetricsError> {
        if gains.is_empty() {
            return Err(MetricsError::InvalidChannel("no subcarrier gains".into()));
        }
        if gains.iter().any(|&g| !(g >= 0.0)) {
            return Err(MetricsError::InvalidChannel(
                "subcarrier gains must be non-negative".into(),
            ));
        }
        if !(noise_density > 0.0) {
            return Err(MetricsError::InvalidChannel(
                "noise density must be strictly positive".into(),
            ));
        }
        Ok(Self {
            gains,
            noise_density,
        })
    }

    /// Frequency-flat channel with the given common gain.
    pub fn flat(subcarriers: usize, gain: f64, noise_density: f64) -> Self {
        Self {
            gains: vec![gain; subcarriers],
            noise_density,
        }
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn noise_density(&self) -> f64 {
        self.noise_density
    }

    /// Diagonal of `C = 2K diag(1_{2M} (x) h / (B sigma_C^2))` in
    /// [`GaussianInput`] ordering (length `2 K M`).
    pub fn rate_gains(&self, cfg: &OfdmConfig) -> Vec<f64> {
        let per_k = self.rate_gains_per_subcarrier(cfg);
        let km = cfg.subcarriers * cfg.symbols;
        let mut out = Vec::with_capacity(2 * km);
        for _comp in 0..2 {
            for _m in 0..cfg.symbols {
                out.extend_from_slice(&per_k[..cfg.subcarriers]);
            }
        }
        out
    }

    /// Diagonal of the per-subcarrier variant `C' = 2K diag(1_2 (x) h / (B sigma_C^2))`
    /// (length `2 K`).
    pub fn rate_gains_per_subcarrier(&self, cfg: &OfdmConfig) -> Vec<f64> {
        let scale = 2.0 * cfg.subcarriers as f64 / (cfg.bandwidth_hz * self.noise_density);
        let head: Vec<f64> = self.gains.iter().map(|h| h * scale).collect();
        let mut out = head.clone();
        out.extend_from_slice(&head);
        out
    }
}

/// One sweep point of an experiment: empirical outlier probability with a
/// Wilson 95% half-width, and range/velocity mean squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub power_dbw: f64,
    pub op_hat: f64,
    pub ci95: f64,
    pub mse_range_m2: f64,
    pub mse_velocity_m2s2: f64,
    pub trials: usize,
}

impl ExperimentResult {
    pub const CSV_HEADER: &'static str = "power_dbw,op,ci95,mse_range,mse_velocity,trials";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.10e},{:.10e},{:.10e},{:.10e},{}",
            self.power_dbw,
            self.op_hat,
            self.ci95,
            self.mse_range_m2,
            self.mse_velocity_m2s2,
            self.trials
        )
    }
}

/// All ambiguity magnitudes |r_{n,v,eps}| over the searched bins, peak first.
///
/// Returns `(peak, sidelobes)` where `peak = |r_{0,0,eps}|` and `sidelobes`
/// holds the remaining `K_G M - 1` magnitudes in scan order.
fn af_magnitudes(
    p: &PowerGrid,
    cfg: &OfdmConfig,
    eps: FractionalDoppler,
) -> (f64, Vec<f64>) {
    let (k, m) = (cfg.subcarriers, cfg.symbols);
    let half = m as i32 / 2;
    let mut sidelobes = Vec::with_capacity(cfg.num_bins() - 1);
    let mut peak = 0.0;
    for v in -half..half {
        // Inner symbol sums t_k = sum_m p_{k,m} e^{-j 2 pi (v - eps) m / M}.
        let step = -TAU * (v as f64 - eps.value()) / m as f64;
        let mut t = vec![Complex64::new(0.0, 0.0); k];
        for mm in 0..m {
            let d = Complex64::from_polar(1.0, step * mm as f64);
            let row = &p.values()[mm * k..(mm + 1) * k];
            for (tk, pkm) in t.iter_mut().zip(row) {
                *tk += pkm * d;
            }
        }
        for n in 0..cfg.cp_len {
            let stepk = TAU * n as f64 / k as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for (kk, tk) in t.iter().enumerate() {
                acc += tk * Complex64::from_polar(1.0, stepk * kk as f64);
            }
            if n == 0 && v == 0 {
                peak = acc.norm();
            } else {
                sidelobes.push(acc.norm());
            }
        }
    }
    (peak, sidelobes)
}

fn check_dims(p: &PowerGrid, cfg: &OfdmConfig) -> Result<(), MetricsError> {
    if p.subcarriers() != cfg.subcarriers || p.symbols() != cfg.symbols {
        return Err(MetricsError::DimensionMismatch {
            found_k: p.subcarriers(),
            found_m: p.symbols(),
            k: cfg.subcarriers,
            m: cfg.symbols,
        });
    }
    Ok(())
}

/// Union-bound upper approximation of the outlier probability:
///
/// `(1 / (2 |kappa|)) sum_eps sum_{(n,v) != (0,0)}
///  exp( -(|r_{0,0,eps}| - |r_{n,v,eps}|) / (2 sigma2) )`
///
/// evaluated with exact ambiguity values. The global 1/2 is retained, so the
/// `sigma2 -> inf` limit is `(K_G M - 1) / 2`.
pub fn ubop(
    p: &PowerGrid,
    cfg: &OfdmConfig,
    sigma2: f64,
    eps_set: &[FractionalDoppler],
) -> Result<f64, MetricsError> {
    if !(sigma2 > 0.0) {
        return Err(MetricsError::NonpositiveSigma2(sigma2));
    }
    if eps_set.is_empty() {
        return Err(MetricsError::EmptyEpsilonSet);
    }
    check_dims(p, cfg)?;
    let mut total = 0.0;
    for &eps in eps_set {
        let (peak, sidelobes) = af_magnitudes(p, cfg, eps);
        for r in sidelobes {
            total += (-(peak - r) / (2.0 * sigma2)).exp();
        }
    }
    Ok(total / (2.0 * eps_set.len() as f64))
}

/// Bessel-form pairwise approximation of the outlier probability:
///
/// `(1 / |kappa|) sum_eps sum_{(n,v) != (0,0)}
///  (1/2) exp(-|r_{0,0,eps}| / (2 sigma2)) I_0(|r_{n,v,eps}| / (2 sigma2))`.
///
/// Never exceeds [`ubop`] on the same inputs since `I_0(b) <= e^b`.
pub fn op_bessel_approx(
    p: &PowerGrid,
    cfg: &OfdmConfig,
    sigma2: f64,
    eps_set: &[FractionalDoppler],
) -> Result<f64, MetricsError> {
    if !(sigma2 > 0.0) {
        return Err(MetricsError::NonpositiveSigma2(sigma2));
    }
    if eps_set.is_empty() {
        return Err(MetricsError::EmptyEpsilonSet);
    }
    check_dims(p, cfg)?;
    let mut total = 0.0;
    for &eps in eps_set {
        let (peak, sidelobes) = af_magnitudes(p, cfg, eps);
        let a = peak / (2.0 * sigma2);
        for r in sidelobes {
            total += 0.5 * bessel::exp_scaled_i0(a, r / (2.0 * sigma2));
        }
    }
    Ok(total / eps_set.len() as f64)
}

/// Mean ambiguity value `E r_{n,v,eps}` of a Gaussian input: the deterministic
/// ambiguity of the total second-moment grid `pbar_R + pbar_I`.
fn mean_af(g: &GaussianInput, n: usize, v: i32, eps: FractionalDoppler) -> Complex64 {
    let (k, m) = (g.subcarriers(), g.symbols());
    let km = k * m;
    let mut acc = Complex64::new(0.0, 0.0);
    let step_m = -TAU * (v as f64 - eps.value()) / m as f64;
    let step_k = TAU * n as f64 / k as f64;
    for mm in 0..m {
        let dm = Complex64::from_polar(1.0, step_m * mm as f64);
        let mut inner = Complex64::new(0.0, 0.0);
        for kk in 0..k {
            let tot = g.pbar[mm * k + kk] + g.pbar[km + mm * k + kk];
            inner += tot * Complex64::from_polar(1.0, step_k * kk as f64);
        }
        acc += dm * inner;
    }
    acc
}

/// Closed-form second moment `E |r_{n,v,eps}|^2` of the random ambiguity:
///
/// `|E r|^2 + 2 ||pbar||^2 - 2 ||pbar - sigma||^2`.
pub fn pairwise_second_moment(
    g: &GaussianInput,
    n: usize,
    v: i32,
    eps: FractionalDoppler,
) -> f64 {
    let mean = mean_af(g, n, v, eps);
    let pbar_sq: f64 = g.pbar.iter().map(|p| p * p).sum();
    let mu_sq: f64 = g
        .pbar
        .iter()
        .zip(&g.sigma)
        .map(|(p, s)| (p - s) * (p - s))
        .sum();
    mean.norm_sqr() + 2.0 * (pbar_sq - mu_sq)
}

/// Magnitude of the mean peak lobe, `|E r_{0,0,eps}| = |sum pbar_{k,m} e^{j 2 pi eps m / M}|`.
pub fn mean_peak_magnitude(g: &GaussianInput, eps: FractionalDoppler) -> f64 {
    mean_af(g, 0, 0, eps).norm()
}

/// Low-SNR averaged union bound (an ordering surrogate, not a probability):
///
/// `(1 / (4 |kappa| sigma2)) sum_eps [ -(K_G M - 1) |E r_{0,0,eps}|
///   + sum_{(n,v) != (0,0)} sqrt(E |r_{n,v,eps}|^2) ]`.
///
/// The radicand of each square root is clamped at zero; a radicand below
/// `-1e-9 (sum pbar)^2` is reported as an error rather than masked.
pub fn aubop(
    g: &GaussianInput,
    cfg: &OfdmConfig,
    sigma2: f64,
    eps_set: &[FractionalDoppler],
) -> Result<f64, MetricsError> {
    if !(sigma2 > 0.0) {
        return Err(MetricsError::NonpositiveSigma2(sigma2));
    }
    if eps_set.is_empty() {
        return Err(MetricsError::EmptyEpsilonSet);
    }
    if g.subcarriers() != cfg.subcarriers || g.symbols() != cfg.symbols {
        return Err(MetricsError::DimensionMismatch {
            found_k: g.subcarriers(),
            found_m: g.symbols(),
            k: cfg.subcarriers,
            m: cfg.symbols,
        });
    }
    let total_power = g.total_power();
    if total_power == 0.0 {
        return Ok(0.0);
    }
    let radicand_tol = 1e-9 * total_power * total_power;
    let sidelobe_count = (cfg.num_bins() - 1) as f64;
    let pbar_sq: f64 = g.pbar.iter().map(|p| p * p).sum();
    let mu_sq: f64 = g
        .pbar
        .iter()
        .zip(&g.sigma)
        .map(|(p, s)| (p - s) * (p - s))
        .sum();
    let offset = 2.0 * (pbar_sq - mu_sq);

    let half = cfg.symbols as i32 / 2;
    let mut acc = 0.0;
    for &eps in eps_set {
        acc -= sidelobe_count * mean_peak_magnitude(g, eps);
        for v in -half..half {
            for n in 0..cfg.cp_len {
                if n == 0 && v == 0 {
                    continue;
                }
                let radicand = mean_af(g, n, v, eps).norm_sqr() + offset;
                if radicand < -radicand_tol {
                    return Err(MetricsError::NegativeRadicand {
                        value: radicand,
                        tol: -radicand_tol,
                    });
                }
                acc += radicand.max(0.0).sqrt();
            }
        }
    }
    Ok(acc / (4.0 * eps_set.len() as f64 * sigma2))
}

/// Average achievable rate in bits/s/Hz:
/// `(1 / (2KM)) sum_q log2(1 + C_{q,q} sigma_q)`.
///
/// `rate_gains` is the diagonal of `C` (see [`CommChannel::rate_gains`]);
/// the log-det collapses to a sum because both matrices are diagonal.
pub fn achievable_rate(sigma: &[f64], rate_gains: &[f64]) -> f64 {
    assert_eq!(
        sigma.len(),
        rate_gains.len(),
        "sigma and rate gains must have the same length"
    );
    let n = sigma.len() as f64;
    sigma
        .iter()
        .zip(rate_gains)
        .map(|(&s, &c)| {
            debug_assert!(s >= -1e-12, "negative variance {s}");
            (1.0 + c * s.max(0.0)).log2()
        })
        .sum::<f64>()
        / n
}

/// Source of communication-symbol realizations for the simulator.
#[derive(Debug, Clone)]
pub enum SymbolSource {
    /// Constant-magnitude symbols: `|X[k,m]| = sqrt(p_{k,m})` with phases
    /// drawn uniformly from the `order` PSK constellation points.
    Psk { grid: PowerGrid, order: u32 },
    /// Complex asymmetric Gaussian symbols with the given moments.
    Gaussian(GaussianInput),
}

impl SymbolSource {
    pub fn subcarriers(&self) -> usize {
        match self {
            SymbolSource::Psk { grid, .. } => grid.subcarriers(),
            SymbolSource::Gaussian(g) => g.subcarriers(),
        }
    }

    pub fn symbols(&self) -> usize {
        match self {
            SymbolSource::Psk { grid, .. } => grid.symbols(),
            SymbolSource::Gaussian(g) => g.symbols(),
        }
    }

    /// Expected total transmit power of one realization.
    pub fn total_power(&self) -> f64 {
        match self {
            SymbolSource::Psk { grid, .. } => grid.total_power(),
            SymbolSource::Gaussian(g) => g.total_power(),
        }
    }

    /// Draw one symbol-grid realization.
    pub fn draw(&self, rng: &mut impl Rng) -> SymbolGrid {
        let (k, m) = (self.subcarriers(), self.symbols());
        let mut values = Vec::with_capacity(k * m);
        match self {
            SymbolSource::Psk { grid, order } => {
                let q = (*order).max(1);
                for mm in 0..m {
                    for kk in 0..k {
                        let amp = grid.value(kk, mm).sqrt();
                        let phase = TAU * rng.gen_range(0..q) as f64 / q as f64;
                        values.push(Complex64::from_polar(amp, phase));
                    }
                }
            }
            SymbolSource::Gaussian(g) => {
                let km = k * m;
                for mm in 0..m {
                    for kk in 0..k {
                        let idx = mm * k + kk;
                        let mu_r = (g.pbar[idx] - g.sigma[idx]).max(0.0).sqrt();
                        let mu_i = (g.pbar[km + idx] - g.sigma[km + idx]).max(0.0).sqrt();
                        let sd_r = g.sigma[idx].sqrt();
                        let sd_i = g.sigma[km + idx].sqrt();
                        let re = mu_r + sd_r * rng.sample::<f64, _>(StandardNormal);
                        let im = mu_i + sd_i * rng.sample::<f64, _>(StandardNormal);
                        values.push(Complex64::new(re, im));
                    }
                }
            }
        }
        SymbolGrid::new(values, k, m).expect("dimensions are consistent by construction")
    }
}

/// Per-point simulation request: the sweep label, trial count, master seed,
/// and an optional pinned fractional Doppler (drawn uniformly when `None`).
#[derive(Debug, Clone, Copy)]
pub struct SimSpec {
    pub power_dbw: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub forced_eps: Option<FractionalDoppler>,
}

/// Fixed-order pairwise summation, independent of worker count.
fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn trial_rng(master_seed: u64, trial: u64) -> ChaCha12Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&trial.to_le_bytes());
    ChaCha12Rng::from_seed(seed)
}

/// Monte Carlo estimate of the outlier probability and range/velocity MSE.
///
/// Per trial: draw a symbol realization from `source`, a uniform true bin, a
/// uniform fractional Doppler (unless pinned), and a uniform scattering phase;
/// synthesize the echo at the configured amplitude and noise power; run the
/// ML estimator; count outliers and accumulate squared bin errors scaled to
/// range/velocity units.
///
/// Trials are distributed across workers with streams derived from
/// `(master_seed, trial index)`, so results are bit-identical regardless of
/// worker count.
pub fn simulate_op(
    cfg: &OfdmConfig,
    source: &SymbolSource,
    spec: &SimSpec,
) -> Result<ExperimentResult, MetricsError> {
    if spec.trials == 0 {
        return Err(MetricsError::ZeroTrials);
    }
    if source.subcarriers() != cfg.subcarriers || source.symbols() != cfg.symbols {
        return Err(MetricsError::DimensionMismatch {
            found_k: source.subcarriers(),
            found_m: source.symbols(),
            k: cfg.subcarriers,
            m: cfg.symbols,
        });
    }
    let amplitude = cfg.echo_amplitude();
    let half = cfg.symbols as i32 / 2;
    let range_bin = cfg.range_bin_m();
    let velocity_bin = cfg.velocity_bin_mps();

    let per_trial: Vec<(bool, f64, f64)> = (0..spec.trials as u64)
        .into_par_iter()
        .map_init(
            || MlEstimator::new(cfg),
            |estimator, trial| {
                let mut rng = trial_rng(spec.master_seed, trial);
                let x = source.draw(&mut rng);
                let bin = DelayDopplerBin {
                    delay: rng.gen_range(0..cfg.cp_len),
                    doppler: rng.gen_range(-half..half),
                };
                let eps = spec.forced_eps.unwrap_or_else(|| loop {
                    let u: f64 = rng.gen();
                    if u > 0.0 {
                        break FractionalDoppler::new(u - 0.5)
                            .expect("u - 0.5 lies inside (-1/2, 1/2)");
                    }
                });
                let phase = TAU * rng.gen::<f64>();
                let echo = EchoParams {
                    gain: Complex64::from_polar(amplitude, phase),
                    bin,
                    eps,
                    noise_power: cfg.noise_power,
                };
                let y = synthesize_echo(&x, &echo, &mut rng);
                let est = estimator
                    .estimate(&y, &x)
                    .expect("dimensions verified above; PSK/Gaussian draws are nonzero");
                let outlier = est != bin;
                let dr = (est.delay as f64 - bin.delay as f64) * range_bin;
                let dv = (est.doppler - bin.doppler) as f64 * velocity_bin;
                (outlier, dr * dr, dv * dv)
            },
        )
        .collect();

    let outliers = per_trial.iter().filter(|t| t.0).count();
    let range_sq: Vec<f64> = per_trial.iter().map(|t| t.1).collect();
    let velocity_sq: Vec<f64> = per_trial.iter().map(|t| t.2).collect();
    let n = spec.trials as f64;
    let op_hat = outliers as f64 / n;

    // Wilson 95% interval half-width.
    let z = 1.959_963_984_540_054_f64;
    let z2 = z * z;
    let ci95 = z * (op_hat * (1.0 - op_hat) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);

    Ok(ExperimentResult {
        power_dbw: spec.power_dbw,
        op_hat,
        ci95,
        mse_range_m2: pairwise_sum(&range_sq) / n,
        mse_velocity_m2s2: pairwise_sum(&velocity_sq) / n,
        trials: spec.trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ambiguity, epsilon_samples};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg(k: usize, kg: usize, m: usize) -> OfdmConfig {
        OfdmConfig::new(k, kg, m, 90.909e6, 24e9, 1e-13, 140.0, 108.0).unwrap()
    }

    fn random_gaussian_input(rng: &mut impl Rng, k: usize, m: usize) -> GaussianInput {
        let n = 2 * k * m;
        let pbar: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let sigma: Vec<f64> = pbar.iter().map(|p| p * rng.gen::<f64>()).collect();
        GaussianInput::new(pbar, sigma, k, m).unwrap()
    }

    #[test]
    fn bessel_series_matches_known_values() {
        // I0(0) = 1, I0(1) = 1.26606587775200834 (power-series oracle).
        assert!((bessel::i0_series(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel::i0_series(1.0) - 1.266_065_877_752_008_3).abs() < 1e-14);
        // (1/2) e^{-1} I0(1) = 0.232879803796820218
        let v = 0.5 * bessel::exp_scaled_i0(1.0, 1.0);
        assert!((v - 0.232_879_803_796_820_2).abs() < 1e-13);
    }

    #[test]
    fn bessel_log_continuous_at_crossover_and_huge_args() {
        // The asymptotic form is good to ~3e-4 at the crossover point.
        let below = bessel::log_i0(14.999_999);
        let above = bessel::log_i0(15.000_001);
        assert!((below - above).abs() < 1e-3);
        // e^{-a} I0(b) for huge arguments stays finite in log space.
        let v = bessel::exp_scaled_i0(1e6, 1e6);
        assert!(v.is_finite() && v > 0.0);
        // At a = b the scaled value behaves like 1/sqrt(2 pi b).
        let expect = 1.0 / (2.0 * std::f64::consts::PI * 1e6).sqrt();
        assert!((v - expect).abs() / expect < 1e-3);
    }

    #[test]
    fn ubop_high_noise_limit() {
        let c = cfg(16, 4, 8);
        let p = PowerGrid::uniform(16, 8, 1.0);
        let eps = epsilon_samples(8);
        let v = ubop(&p, &c, 1e30, &eps).unwrap();
        let want = (c.num_bins() as f64 - 1.0) / 2.0;
        assert!((v - want).abs() < 1e-9);
    }

    #[test]
    fn ubop_uniform_at_zero_eps_is_closed_form() {
        let c = cfg(16, 4, 8);
        let p = PowerGrid::uniform(16, 8, 2.0);
        let sigma2 = 0.35;
        let v = ubop(&p, &c, sigma2, &[FractionalDoppler::ZERO]).unwrap();
        let want = (c.num_bins() as f64 - 1.0) / 2.0 * (-2.0 / (2.0 * sigma2)).exp();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn ubop_frozen_oracle_value() {
        // Direct-sum oracle at K=32, K_G=8, M=8, uniform unit budget,
        // |kappa| = 8, sigma2 = 10^{4.6} / 256 (a -46 dB per-cell SNR).
        let c = cfg(32, 8, 8);
        let p = PowerGrid::uniform(32, 8, 1.0);
        let sigma2 = 10f64.powf(4.6) / 256.0;
        let eps = epsilon_samples(8);
        let v = ubop(&p, &c, sigma2, &eps).unwrap();
        assert!(
            (v - 31.412_952_532_450_16).abs() < 1e-9,
            "ubop = {v}"
        );
        // In-test oracle: exhaustive AF enumeration through grid::ambiguity.
        let mut oracle = 0.0;
        for &e in &eps {
            let peak = ambiguity(&p, 0, 0, e).norm();
            for v_bin in -4..4 {
                for n in 0..8 {
                    if n == 0 && v_bin == 0 {
                        continue;
                    }
                    let r = ambiguity(&p, n, v_bin, e).norm();
                    oracle += (-(peak - r) / (2.0 * sigma2)).exp();
                }
            }
        }
        oracle /= 2.0 * eps.len() as f64;
        assert!((v - oracle).abs() < 1e-10);
    }

    #[test]
    fn ubop_rejects_bad_sigma() {
        let c = cfg(8, 4, 4);
        let p = PowerGrid::uniform(8, 4, 1.0);
        assert!(matches!(
            ubop(&p, &c, 0.0, &[FractionalDoppler::ZERO]),
            Err(MetricsError::NonpositiveSigma2(_))
        ));
    }

    #[test]
    fn ubop_is_average_over_eps_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let c = cfg(8, 4, 4);
        let raw: Vec<f64> = (0..32).map(|_| rng.gen()).collect();
        let total: f64 = raw.iter().sum();
        let p = PowerGrid::new(raw, 8, 4, total).unwrap();
        let e1 = FractionalDoppler::new(0.11).unwrap();
        let e2 = FractionalDoppler::new(-0.37).unwrap();
        let a = ubop(&p, &c, 0.5, &[e1]).unwrap();
        let b = ubop(&p, &c, 0.5, &[e2]).unwrap();
        let both = ubop(&p, &c, 0.5, &[e1, e2]).unwrap();
        let swapped = ubop(&p, &c, 0.5, &[e2, e1]).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-12);
        assert!((both - swapped).abs() < 1e-15);
        // A duplicated sample only enters through the averaging weight.
        let dup = ubop(&p, &c, 0.5, &[e1, e1, e2]).unwrap();
        assert!((dup - (2.0 * a + b) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bessel_form_never_exceeds_ubop() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let c = cfg(8, 4, 4);
        let eps = epsilon_samples(4);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..32).map(|_| rng.gen()).collect();
            let total: f64 = raw.iter().sum();
            let p = PowerGrid::new(raw, 8, 4, total).unwrap();
            let sigma2 = 10f64.powf(rng.gen_range(-2.0..2.0));
            let ub = ubop(&p, &c, sigma2, &eps).unwrap();
            let bes = op_bessel_approx(&p, &c, sigma2, &eps).unwrap();
            assert!(
                bes <= ub * (1.0 + 1e-12),
                "bessel {bes} exceeds ubop {ub}"
            );
        }
    }

    #[test]
    fn bessel_form_limits() {
        let c = cfg(16, 4, 8);
        let p = PowerGrid::uniform(16, 8, 2.0);
        // All sidelobes vanish at eps = 0: equals ubop exactly (I0(0) = 1).
        let sigma2 = 0.35;
        let bes = op_bessel_approx(&p, &c, sigma2, &[FractionalDoppler::ZERO]).unwrap();
        let ub = ubop(&p, &c, sigma2, &[FractionalDoppler::ZERO]).unwrap();
        assert!((bes - ub).abs() < 1e-12);
        // sigma2 -> inf limit.
        let v = op_bessel_approx(&p, &c, 1e30, &epsilon_samples(4)).unwrap();
        assert!((v - (c.num_bins() as f64 - 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn second_moment_deterministic_limit() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let raw: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let total: f64 = raw.iter().sum();
        let p = PowerGrid::new(raw.clone(), 4, 2, total).unwrap();
        let g = GaussianInput::deterministic(&p);
        for n in 0..4 {
            for v in -1..1 {
                let eps = FractionalDoppler::new(0.17).unwrap();
                let want = ambiguity(&p, n, v, eps).norm_sqr();
                let got = pairwise_second_moment(&g, n, v, eps);
                assert!((want - got).abs() < 1e-10 * total * total);
            }
        }
    }

    #[test]
    fn second_moment_zero_mean_case() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 2 * 4 * 2;
        let pbar: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let g = GaussianInput::new(pbar.clone(), pbar.clone(), 4, 2).unwrap();
        let eps = FractionalDoppler::new(-0.2).unwrap();
        let got = pairwise_second_moment(&g, 1, 0, eps);
        // No subtraction term: |E r|^2 + 2 ||pbar||^2.
        let mean = mean_af(&g, 1, 0, eps);
        let want = mean.norm_sqr() + 2.0 * pbar.iter().map(|p| p * p).sum::<f64>();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn second_moment_matches_monte_carlo() {
        // Sampling oracle on a K=4, M=2 instance, 10^5 draws, 3 SE tolerance.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let g = random_gaussian_input(&mut rng, 4, 2);
        let src = SymbolSource::Gaussian(g.clone());
        let triples = [(1usize, 0i32, 0.23), (0, 1, -0.4), (2, -1, 0.0)];
        let draws = 100_000;
        for &(n, v, e) in &triples {
            let eps = FractionalDoppler::new(e).unwrap();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..draws {
                let x = src.draw(&mut rng);
                let mut grid_vals = Vec::with_capacity(8);
                for mm in 0..2 {
                    for kk in 0..4 {
                        grid_vals.push(x.value(kk, mm).norm_sqr());
                    }
                }
                let pg = PowerGrid::new(grid_vals, 4, 2, f64::INFINITY).unwrap();
                let r2 = ambiguity(&pg, n, v, eps).norm_sqr();
                sum += r2;
                sum_sq += r2 * r2;
            }
            let mc = sum / draws as f64;
            let var = (sum_sq / draws as f64 - mc * mc).max(0.0);
            let se = (var / draws as f64).sqrt();
            let closed = pairwise_second_moment(&g, n, v, eps);
            assert!(
                (closed - mc).abs() < 3.0 * se,
                "triple ({n},{v},{e}): closed {closed}, mc {mc}, se {se}"
            );
        }
    }

    #[test]
    fn second_moment_dominates_mean_peak_squared() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..20 {
            let g = random_gaussian_input(&mut rng, 4, 4);
            let eps = FractionalDoppler::new(rng.gen_range(-0.49..0.49)).unwrap();
            let second = pairwise_second_moment(&g, 0, 0, eps);
            let mean = mean_peak_magnitude(&g, eps);
            assert!(second >= mean * mean - 1e-9);
        }
    }

    #[test]
    fn mean_peak_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let g = random_gaussian_input(&mut rng, 4, 4);
        // eps = 0: exactly the total power.
        let v = mean_peak_magnitude(&g, FractionalDoppler::ZERO);
        assert!((v - g.total_power()).abs() < 1e-12 * g.total_power());

        // Flat pbar, eps = 0.25, M = 4: Dirichlet magnitude oracle.
        let flat = GaussianInput::new(vec![0.5; 2 * 2 * 4], vec![0.0; 16], 2, 4).unwrap();
        let eps = FractionalDoppler::new(0.25).unwrap();
        let got = mean_peak_magnitude(&flat, eps);
        let mut oracle = Complex64::new(0.0, 0.0);
        for m in 0..4 {
            // per-symbol total power is 2 cells * (0.5 + 0.5)
            oracle += 2.0 * Complex64::from_polar(1.0, TAU * 0.25 * m as f64 / 4.0);
        }
        assert!((got - oracle.norm()).abs() < 1e-12);

        // Homogeneity: scaling pbar scales the output.
        let scaled = GaussianInput::new(
            g.pbar().iter().map(|p| 3.0 * p).collect(),
            g.sigma().iter().map(|s| 3.0 * s).collect(),
            4,
            4,
        )
        .unwrap();
        let e = FractionalDoppler::new(0.3).unwrap();
        assert!(
            (mean_peak_magnitude(&scaled, e) - 3.0 * mean_peak_magnitude(&g, e)).abs()
                < 1e-10 * g.total_power()
        );
    }

    #[test]
    fn aubop_zero_power_and_deterministic_uniform() {
        let c = cfg(8, 4, 4);
        let zero = GaussianInput::new(vec![0.0; 64], vec![0.0; 64], 8, 4).unwrap();
        assert_eq!(aubop(&zero, &c, 1.0, &[FractionalDoppler::ZERO]).unwrap(), 0.0);

        // sigma = 0, uniform pbar, eps = {0}: sidelobe terms vanish and the
        // objective is -(K_G M - 1) sum(pbar) / (4 sigma2).
        let uniform = GaussianInput::new(vec![0.25; 64], vec![0.0; 64], 8, 4).unwrap();
        let sigma2 = 0.7;
        let v = aubop(&uniform, &c, sigma2, &[FractionalDoppler::ZERO]).unwrap();
        let want = -(c.num_bins() as f64 - 1.0) * 16.0 / (4.0 * sigma2);
        assert!((v - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn aubop_composes_from_its_oracle_ops() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let c = cfg(4, 2, 2);
        let g = random_gaussian_input(&mut rng, 4, 2);
        let sigma2 = 1.3;
        let eps_set = epsilon_samples(3);
        let got = aubop(&g, &c, sigma2, &eps_set).unwrap();
        let mut want = 0.0;
        for &e in &eps_set {
            want -= (c.num_bins() as f64 - 1.0) * mean_peak_magnitude(&g, e);
            for v in -1..1 {
                for n in 0..2 {
                    if n == 0 && v == 0 {
                        continue;
                    }
                    want += pairwise_second_moment(&g, n, v, e).max(0.0).sqrt();
                }
            }
        }
        want /= 4.0 * eps_set.len() as f64 * sigma2;
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn achievable_rate_cases() {
        let gains = vec![2.0, 0.5, 1.0, 4.0];
        assert_eq!(achievable_rate(&[0.0; 4], &gains), 0.0);

        // Single nonzero entry with C sigma = 1 contributes log2(2)/n = 1/n.
        let mut sigma = vec![0.0; 4];
        sigma[1] = 2.0;
        assert!((achievable_rate(&sigma, &gains) - 0.25).abs() < 1e-15);

        // Log-det oracle: product of diagonal factors, then one log.
        let sigma = [0.3, 0.1, 0.9, 0.2];
        let got = achievable_rate(&sigma, &gains);
        let det: f64 = sigma
            .iter()
            .zip(&gains)
            .map(|(s, c)| 1.0 + c * s)
            .product();
        assert!((got - det.log2() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn achievable_rate_monotone_in_each_entry() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let gains: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 3.0).collect();
        let sigma: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let base = achievable_rate(&sigma, &gains);
        for q in 0..8 {
            let mut bumped = sigma.clone();
            bumped[q] += 0.1;
            let up = achievable_rate(&bumped, &gains);
            assert!(up >= base);
            // Concavity along the coordinate: the second difference is negative.
            let mut bumped2 = sigma.clone();
            bumped2[q] += 0.2;
            let up2 = achievable_rate(&bumped2, &gains);
            assert!(up2 - up <= up - base + 1e-12);
        }
    }

    #[test]
    fn gaussian_input_validation() {
        assert!(GaussianInput::new(vec![1.0; 4], vec![0.5; 4], 1, 2).is_ok());
        assert!(GaussianInput::new(vec![1.0; 3], vec![0.5; 4], 1, 2).is_err());
        assert!(GaussianInput::new(vec![1.0; 4], vec![1.5; 4], 1, 2).is_err());
        assert!(GaussianInput::new(vec![-1.0; 4], vec![0.0; 4], 1, 2).is_err());
        // Rounding-level violations are clamped.
        let g = GaussianInput::new(vec![1.0; 4], vec![1.0 + 1e-12; 4], 1, 2).unwrap();
        assert!(g.sigma().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn simulate_pure_noise_matches_uniform_argmax() {
        // Zero echo amplitude: every bin is equally likely, so the correct-bin
        // rate is 1/(K_G M) and op = 1 - 1/(K_G M).
        let c = OfdmConfig::new(8, 4, 4, 90.909e6, 24e9, 1.0, f64::INFINITY, 108.0).unwrap();
        let source = SymbolSource::Psk {
            grid: PowerGrid::uniform(8, 4, 1.0),
            order: 2,
        };
        let spec = SimSpec {
            power_dbw: 0.0,
            trials: 20_000,
            master_seed: 99,
            forced_eps: None,
        };
        let res = simulate_op(&c, &source, &spec).unwrap();
        let want = 1.0 - 1.0 / 16.0;
        assert!(
            (res.op_hat - want).abs() < 3.0 * (want * (1.0 - want) / 20_000f64).sqrt(),
            "op {} vs {want}",
            res.op_hat
        );
    }

    #[test]
    fn simulate_noiseless_bpsk_never_misses() {
        let c = OfdmConfig::new(8, 4, 4, 90.909e6, 24e9, 1e-300, 0.0, 108.0).unwrap();
        let source = SymbolSource::Psk {
            grid: PowerGrid::uniform(8, 4, 1.0),
            order: 2,
        };
        let spec = SimSpec {
            power_dbw: 0.0,
            trials: 500,
            master_seed: 7,
            forced_eps: Some(FractionalDoppler::ZERO),
        };
        let res = simulate_op(&c, &source, &spec).unwrap();
        assert_eq!(res.op_hat, 0.0);
        assert_eq!(res.mse_range_m2, 0.0);
        assert_eq!(res.mse_velocity_m2s2, 0.0);
    }

    #[test]
    fn simulate_is_deterministic_and_rejects_zero_trials() {
        let c = cfg(8, 4, 4);
        let source = SymbolSource::Psk {
            grid: PowerGrid::uniform(8, 4, 1.0),
            order: 4,
        };
        let spec = SimSpec {
            power_dbw: 3.0,
            trials: 200,
            master_seed: 41,
            forced_eps: None,
        };
        let a = simulate_op(&c, &source, &spec).unwrap();
        let b = simulate_op(&c, &source, &spec).unwrap();
        assert_eq!(a, b);
        let bad = SimSpec { trials: 0, ..spec };
        assert!(matches!(
            simulate_op(&c, &source, &bad),
            Err(MetricsError::ZeroTrials)
        ));
    }

    #[test]
    fn wilson_interval_narrows_with_trials() {
        let c = OfdmConfig::new(8, 4, 4, 90.909e6, 24e9, 1.0, f64::INFINITY, 108.0).unwrap();
        let source = SymbolSource::Psk {
            grid: PowerGrid::uniform(8, 4, 1.0),
            order: 2,
        };
        let mut widths = Vec::new();
        for trials in [2000usize, 4000, 8000] {
            let spec = SimSpec {
                power_dbw: 0.0,
                trials,
                master_seed: 5,
                forced_eps: None,
            };
            widths.push(simulate_op(&c, &source, &spec).unwrap().ci95);
        }
        // Doubling trials halves the width within 20%.
        for pair in widths.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (ratio - 2f64.sqrt()).abs() < 0.2 * 2f64.sqrt(),
                "width ratio {ratio}"
            );
        }
    }

    #[test]
    fn experiment_result_csv_row_shape() {
        let r = ExperimentResult {
            power_dbw: -15.0,
            op_hat: 0.125,
            ci95: 0.01,
            mse_range_m2: 2.5,
            mse_velocity_m2s2: 0.75,
            trials: 1000,
        };
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), 6);
        assert!(row.starts_with("-15.000000,"));
        assert!(row.ends_with(",1000"));
    }
}
