//! OFDM grid geometry, steering vectors, and exact ambiguity-function evaluation.
//!
//! Everything downstream (the transmit chain, the outlier-probability
//! analytics, the optimizers) is built on the objects defined here: the block
//! geometry ([`OfdmConfig`]), delay-Doppler bins, fractional Doppler offsets,
//! per-cell power allocations ([`PowerGrid`]) and the discrete ambiguity
//! function of a power allocation ([`ambiguity`]).
//!
//! All ambiguity values are exact double sums over the K x M grid; there is no
//! windowing and no fast approximate path.

use num_complex::Complex64;
use std::f64::consts::TAU;
use thiserror::Error;

/// Speed of light in m/s, used for range/velocity conversions.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Errors arising from invalid grid geometry or values.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("delay bin {delay} outside 0..{max}")]
    DelayOutOfRange { delay: usize, max: usize },
    #[error("Doppler bin {doppler} outside {min}..{max}")]
    DopplerOutOfRange { doppler: i32, min: i32, max: i32 },
    #[error("fractional Doppler {0} outside the open interval (-1/2, 1/2)")]
    FractionalOutOfRange(f64),
    #[error("power grid has {found} entries, expected {expected}")]
    DimensionMismatch { found: usize, expected: usize },
    #[error("power grid entry ({k}, {m}) is negative: {value}")]
    NegativePower { k: usize, m: usize, value: f64 },
    #[error("power grid total {total} exceeds budget {budget}")]
    BudgetExceeded { total: f64, budget: f64 },
}

/// OFDM block geometry and the physical budget terms that fix the radar SNR.
///
/// One block carries `symbols` OFDM symbols of `subcarriers` subcarriers each,
/// every symbol extended by a cyclic prefix of `cp_len` sub-pulses. Delay is
/// resolved to `1/bandwidth_hz`, Doppler to `bandwidth_hz / (k_total * symbols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmConfig {
    /// Number of subcarriers K per OFDM symbol.
    pub subcarriers: usize,
    /// Cyclic-prefix length K_G in sub-pulses; bounds the observable delay span.
    pub cp_len: usize,
    /// OFDM symbols M per block. Must be even so Doppler bins span -M/2 .. M/2-1.
    pub symbols: usize,
    /// Signal bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Receiver noise power (linear) over the signal bandwidth.
    pub noise_power: f64,
    /// Total echo power budget in dB (two-way path loss plus the target
    /// cross-section term); fixes the scattering amplitude `A`.
    pub radar_loss_db: f64,
    /// One-way communication path loss in dB; fixes the mean channel gain.
    pub comm_loss_db: f64,
}

impl OfdmConfig {
    /// Validate the geometry invariants: `cp_len < subcarriers`, `symbols`
    /// even, and all physical quantities strictly positive.
    pub fn new(
        subcarriers: usize,
        cp_len: usize,
        symbols: usize,
        bandwidth_hz: f64,
        carrier_hz: f64,
        noise_power: f64,
        radar_loss_db: f64,
        comm_loss_db: f64,
    ) -> Result<Self, GridError> {
        if subcarriers == 0 || cp_len == 0 || symbols == 0 {
            return Err(GridError::InvalidConfig(
                "subcarriers, cp_len and symbols must be positive".into(),
            ));
        }
        if cp_len >= subcarriers {
            return Err(GridError::InvalidConfig(format!(
                "cp_len ({cp_len}) must be smaller than subcarriers ({subcarriers})"
            )));
        }
        if symbols % 2 != 0 {
            return Err(GridError::InvalidConfig(format!(
                "symbols ({symbols}) must be even"
            )));
        }
        if !(bandwidth_hz > 0.0) || !(carrier_hz > 0.0) || !(noise_power > 0.0) {
            return Err(GridError::InvalidConfig(
                "bandwidth, carrier frequency and noise power must be strictly positive".into(),
            ));
        }
        Ok(Self {
            subcarriers,
            cp_len,
            symbols,
            bandwidth_hz,
            carrier_hz,
            noise_power,
            radar_loss_db,
            comm_loss_db,
        })
    }

    /// Total sub-pulses per OFDM symbol including the cyclic prefix, K_T = K + K_G.
    pub fn k_total(&self) -> usize {
        self.subcarriers + self.cp_len
    }

    /// Delay resolution in seconds, 1/B.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    /// Doppler resolution in Hz, B / (K_T * M).
    pub fn doppler_resolution(&self) -> f64 {
        self.bandwidth_hz / (self.k_total() as f64 * self.symbols as f64)
    }

    /// Range extent of one delay bin in meters, c / (2 B).
    pub fn range_bin_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay_resolution() / 2.0
    }

    /// Velocity extent of one Doppler bin in m/s.
    pub fn velocity_bin_mps(&self) -> f64 {
        self.doppler_resolution() * SPEED_OF_LIGHT / (2.0 * self.carrier_hz)
    }

    /// Number of delay-Doppler bins searched by the estimator, K_G * M.
    pub fn num_bins(&self) -> usize {
        self.cp_len * self.symbols
    }

    /// Echo amplitude `A` implied by the radar budget.
    pub fn echo_amplitude(&self) -> f64 {
        10f64.powf(-self.radar_loss_db / 20.0)
    }

    /// Effective noise level sigma^2 = sigma_N^2 / A^2 used by the analytics.
    pub fn effective_sigma2(&self) -> f64 {
        let a = self.echo_amplitude();
        self.noise_power / (a * a)
    }

    /// Doppler bin range, -M/2 .. M/2 - 1.
    pub fn doppler_bins(&self) -> std::ops::Range<i32> {
        let half = self.symbols as i32 / 2;
        -half..half
    }

    /// Linearized reporting index q = n + (v + M/2) * K_G.
    pub fn bin_index(&self, bin: &DelayDopplerBin) -> usize {
        let half = self.symbols as i32 / 2;
        bin.delay + (bin.doppler + half) as usize * self.cp_len
    }
}

/// On-grid delay-Doppler bin: delay in `{0, .., K_G-1}`, Doppler in `{-M/2, .., M/2-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayDopplerBin {
    pub delay: usize,
    pub doppler: i32,
}

impl DelayDopplerBin {
    /// Construct a bin, validating both indices against the configuration.
    pub fn new(delay: usize, doppler: i32, cfg: &OfdmConfig) -> Result<Self, GridError> {
        if delay >= cfg.cp_len {
            return Err(GridError::DelayOutOfRange {
                delay,
                max: cfg.cp_len,
            });
        }
        let half = cfg.symbols as i32 / 2;
        if doppler < -half || doppler >= half {
            return Err(GridError::DopplerOutOfRange {
                doppler,
                min: -half,
                max: half,
            });
        }
        Ok(Self { delay, doppler })
    }
}

/// Off-grid Doppler remainder in the open interval (-1/2, 1/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalDoppler(f64);

impl FractionalDoppler {
    /// The on-grid case, eps = 0.
    pub const ZERO: FractionalDoppler = FractionalDoppler(0.0);

    pub fn new(eps: f64) -> Result<Self, GridError> {
        if !(eps.abs() < 0.5) {
            return Err(GridError::FractionalOutOfRange(eps));
        }
        Ok(Self(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Non-negative per-subcarrier, per-symbol power allocation with a total budget.
///
/// Entries are stored symbol-major (`m * K + k`). Tiny negative values from
/// solver rounding (within `-1e-12 * max(budget, 1)`) are clamped to zero at
/// construction; anything more negative is rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerGrid {
    values: Vec<f64>,
    subcarriers: usize,
    symbols: usize,
    budget: f64,
}

impl PowerGrid {
    /// Build a grid from raw values, checking non-negativity and the budget.
    pub fn new(
        values: Vec<f64>,
        subcarriers: usize,
        symbols: usize,
        budget: f64,
    ) -> Result<Self, GridError> {
        let expected = subcarriers * symbols;
        if values.len() != expected {
            return Err(GridError::DimensionMismatch {
                found: values.len(),
                expected,
            });
        }
        let clamp_tol = -1e-12 * budget.max(1.0);
        let mut values = values;
        for (idx, v) in values.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v < clamp_tol {
                    return Err(GridError::NegativePower {
                        k: idx % subcarriers,
                        m: idx / subcarriers,
                        value: *v,
                    });
                }
                *v = 0.0;
            }
        }
        let total: f64 = values.iter().sum();
        if total > budget + 1e-9 * budget.max(1.0) {
            return Err(GridError::BudgetExceeded { total, budget });
        }
        Ok(Self {
            values,
            subcarriers,
            symbols,
            budget,
        })
    }

    /// Uniform allocation: every cell carries `budget / (K * M)`.
    pub fn uniform(subcarriers: usize, symbols: usize, budget: f64) -> Self {
        let n = subcarriers * symbols;
        Self {
            values: vec![budget / n as f64; n],
            subcarriers,
            symbols,
            budget,
        }
    }

    /// Spread per-symbol powers uniformly over the subcarriers: p_{k,m} = p_m / K.
    pub fn from_symbol_power(
        symbol_power: &[f64],
        subcarriers: usize,
        budget: f64,
    ) -> Result<Self, GridError> {
        let symbols = symbol_power.len();
        let k = subcarriers as f64;
        let mut values = Vec::with_capacity(subcarriers * symbols);
        for &pm in symbol_power {
            for _ in 0..subcarriers {
                values.push(pm / k);
            }
        }
        Self::new(values, subcarriers, symbols, budget)
    }

    pub fn value(&self, k: usize, m: usize) -> f64 {
        self.values[m * self.subcarriers + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn total_power(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Per-symbol totals p_m = sum_k p_{k,m}.
    pub fn symbol_power(&self) -> Vec<f64> {
        (0..self.symbols)
            .map(|m| {
                self.values[m * self.subcarriers..(m + 1) * self.subcarriers]
                    .iter()
                    .sum()
            })
            .collect()
    }
}

/// One sample of the discrete ambiguity function with its index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfValue {
    pub delay: usize,
    pub doppler: i32,
    pub eps: FractionalDoppler,
    pub value: Complex64,
}

/// Doppler steering vector: entry m is `exp(-j 2 pi m (v - eps) / M)`.
pub fn doppler_phase_vector(v: i32, eps: FractionalDoppler, symbols: usize) -> Vec<Complex64> {
    assert!(symbols >= 1, "symbols must be at least 1");
    let step = -TAU * (v as f64 - eps.value()) / symbols as f64;
    (0..symbols)
        .map(|m| Complex64::from_polar(1.0, step * m as f64))
        .collect()
}

/// Range steering vector: entry k is `exp(j 2 pi n k / K)`.
pub fn range_phase_vector(n: usize, subcarriers: usize) -> Vec<Complex64> {
    assert!(n < subcarriers, "delay index {n} must be below {subcarriers}");
    let step = TAU * n as f64 / subcarriers as f64;
    (0..subcarriers)
        .map(|k| Complex64::from_polar(1.0, step * k as f64))
        .collect()
}

/// Deterministic midpoint grid of fractional-Doppler samples,
/// `eps_l = (2l - count - 1) / (2 count)` for `l = 1..count`.
///
/// The samples are symmetric about zero and stay inside (-1/2, 1/2).
pub fn epsilon_samples(count: usize) -> Vec<FractionalDoppler> {
    assert!(count >= 1, "count must be at least 1");
    (1..=count)
        .map(|l| {
            let eps = (2 * l) as f64 - (count as f64 + 1.0);
            FractionalDoppler(eps / (2.0 * count as f64))
        })
        .collect()
}

/// Discrete ambiguity function of a power allocation,
/// `r_{n,v,eps} = sum_{m,k} p_{k,m} e^{j 2 pi n k / K} e^{-j 2 pi (v - eps) m / M}`.
///
/// Evaluated as an exact double sum. At `(0, 0, 0)` this equals the total power.
///
/// # Panics
///
/// Panics if `delay >= K`.
pub fn ambiguity(p: &PowerGrid, delay: usize, doppler: i32, eps: FractionalDoppler) -> Complex64 {
    let range = range_phase_vector(delay, p.subcarriers());
    let dop = doppler_phase_vector(doppler, eps, p.symbols());
    let k = p.subcarriers();
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, &dm) in dop.iter().enumerate() {
        let row = &p.values()[m * k..(m + 1) * k];
        let mut inner = Complex64::new(0.0, 0.0);
        for (pkm, fk) in row.iter().zip(range.iter()) {
            inner += pkm * fk;
        }
        acc += dm * inner;
    }
    acc
}

/// Ambiguity sample bundled with its index, for reporting.
pub fn ambiguity_sample(
    p: &PowerGrid,
    delay: usize,
    doppler: i32,
    eps: FractionalDoppler,
) -> AfValue {
    AfValue {
        delay,
        doppler,
        eps,
        value: ambiguity(p, delay, doppler, eps),
    }
}
