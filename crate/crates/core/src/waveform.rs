//! OFDM transmit chain, target echo synthesis, and the 2D-FFT maximum-likelihood
//! delay-Doppler bin estimator.
//!
//! The DFT convention is unitary in both directions (`1/sqrt(K)`), so the
//! frequency-domain power `|X[k,m]|^2` equals the time-domain power symbol by
//! symbol and no bookkeeping factors appear anywhere else.
//!
//! Echo synthesis is done directly in the frequency domain: the received grid
//! is the transmitted grid under a delay phase ramp across subcarriers and a
//! Doppler phase ramp across symbols, plus white Gaussian noise. Fractional
//! Doppler only enters through the per-symbol ramp; inter-carrier terms within
//! one symbol are outside the model.

use crate::grid::{DelayDopplerBin, FractionalDoppler, OfdmConfig};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::TAU;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("symbol grid is {found_k} x {found_m}, expected {k} x {m}")]
    DimensionMismatch {
        found_k: usize,
        found_m: usize,
        k: usize,
        m: usize,
    },
    #[error("sample buffer has {found} entries, expected {expected}")]
    SampleLength { found: usize, expected: usize },
    #[error("reference grid is identically zero")]
    ZeroReference,
}

/// K x M grid of frequency-domain communication symbols, stored symbol-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    values: Vec<Complex64>,
    subcarriers: usize,
    symbols: usize,
}

impl SymbolGrid {
    pub fn new(
        values: Vec<Complex64>,
        subcarriers: usize,
        symbols: usize,
    ) -> Result<Self, WaveformError> {
        if values.len() != subcarriers * symbols {
            return Err(WaveformError::SampleLength {
                found: values.len(),
                expected: subcarriers * symbols,
            });
        }
        Ok(Self {
            values,
            subcarriers,
            symbols,
        })
    }

    pub fn zeros(subcarriers: usize, symbols: usize) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); subcarriers * symbols],
            subcarriers,
            symbols,
        }
    }

    pub fn value(&self, k: usize, m: usize) -> Complex64 {
        self.values[m * self.subcarriers + k]
    }

    pub fn set(&mut self, k: usize, m: usize, v: Complex64) {
        self.values[m * self.subcarriers + k] = v;
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    /// Total grid power `sum |X[k,m]|^2`.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|x| x.norm_sqr()).sum()
    }

    /// One OFDM symbol (column m) as a contiguous slice.
    pub fn symbol(&self, m: usize) -> &[Complex64] {
        &self.values[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    fn check_dims(&self, cfg: &OfdmConfig) -> Result<(), WaveformError> {
        if self.subcarriers != cfg.subcarriers || self.symbols != cfg.symbols {
            return Err(WaveformError::DimensionMismatch {
                found_k: self.subcarriers,
                found_m: self.symbols,
                k: cfg.subcarriers,
                m: cfg.symbols,
            });
        }
        Ok(())
    }
}

/// Ground truth of one target echo: complex scattering gain, on-grid bin,
/// fractional Doppler, and the receiver noise power.
#[derive(Debug, Clone, Copy)]
pub struct EchoParams {
    pub gain: Complex64,
    pub bin: DelayDopplerBin,
    pub eps: FractionalDoppler,
    pub noise_power: f64,
}

/// Modulate a symbol grid to time-domain samples with cyclic prefix.
///
/// Per symbol, the K time samples are the unitary inverse DFT of the symbol's
/// subcarrier values and the last `cp_len` of them are prepended, giving
/// `k_total` samples per symbol, `M * k_total` in all.
pub fn modulate(x: &SymbolGrid, cfg: &OfdmConfig) -> Result<Vec<Complex64>, WaveformError> {
    x.check_dims(cfg)?;
    let k = cfg.subcarriers;
    let kg = cfg.cp_len;
    let ifft = FftPlanner::new().plan_fft_inverse(k);
    let scale = 1.0 / (k as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.symbols * cfg.k_total());
    let mut body = vec![Complex64::new(0.0, 0.0); k];
    for m in 0..cfg.symbols {
        body.copy_from_slice(x.symbol(m));
        ifft.process(&mut body);
        for sample in body.iter_mut() {
            *sample *= scale;
        }
        out.extend_from_slice(&body[k - kg..]);
        out.extend_from_slice(&body);
    }
    Ok(out)
}

/// Strip cyclic prefixes and apply the unitary forward DFT per symbol,
/// recovering the frequency-domain grid.
pub fn demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<SymbolGrid, WaveformError> {
    let k = cfg.subcarriers;
    let kt = cfg.k_total();
    let expected = cfg.symbols * kt;
    if samples.len() != expected {
        return Err(WaveformError::SampleLength {
            found: samples.len(),
            expected,
        });
    }
    let fft = FftPlanner::new().plan_fft_forward(k);
    let scale = 1.0 / (k as f64).sqrt();
    let mut values = Vec::with_capacity(cfg.symbols * k);
    let mut body = vec![Complex64::new(0.0, 0.0); k];
    for m in 0..cfg.symbols {
        body.copy_from_slice(&samples[m * kt + cfg.cp_len..(m + 1) * kt]);
        fft.process(&mut body);
        values.extend(body.iter().map(|v| v * scale));
    }
    SymbolGrid::new(values, k, cfg.symbols)
}

/// Synthesize the received frequency-domain grid for one target echo:
///
/// `Y[k,m] = a X[k,m] e^{-j 2 pi n0 k / K} e^{j 2 pi (v0 + eps) m / M} + W[k,m]`
///
/// with `W` complex Gaussian of total variance `noise_power` (independent
/// real/imaginary halves). Noise samples are drawn from `rng` in grid order.
pub fn synthesize_echo(
    x: &SymbolGrid,
    echo: &EchoParams,
    rng: &mut impl Rng,
) -> SymbolGrid {
    let k = x.subcarriers();
    let m_total = x.symbols();
    let n0 = echo.bin.delay as f64;
    let dop = echo.bin.doppler as f64 + echo.eps.value();
    let noise_scale = (echo.noise_power / 2.0).sqrt();
    let mut values = Vec::with_capacity(k * m_total);
    for m in 0..m_total {
        let ramp = Complex64::from_polar(1.0, TAU * dop * m as f64 / m_total as f64);
        for kk in 0..k {
            let delay_phase = Complex64::from_polar(1.0, -TAU * n0 * kk as f64 / k as f64);
            let w = Complex64::new(
                noise_scale * rng.sample::<f64, _>(StandardNormal),
                noise_scale * rng.sample::<f64, _>(StandardNormal),
            );
            values.push(echo.gain * x.value(kk, m) * delay_phase * ramp + w);
        }
    }
    SymbolGrid {
        values,
        subcarriers: k,
        symbols: m_total,
    }
}

/// Reusable 2D-FFT matched-filter estimator for a fixed grid geometry.
///
/// The statistic `|sum_{m,k} Y[k,m] X[k,m]* e^{j 2 pi n k / K} e^{-j 2 pi v m / M}|`
/// is evaluated with an M-point transform along symbols followed by a K-point
/// transform along subcarriers, keeping the first `cp_len` delay outputs.
/// Argmax ties break toward the smallest linearized index
/// `q = n + (v + M/2) K_G`.
pub struct MlEstimator {
    subcarriers: usize,
    symbols: usize,
    cp_len: usize,
    fft_m: Arc<dyn Fft<f64>>,
    ifft_k: Arc<dyn Fft<f64>>,
}

impl MlEstimator {
    pub fn new(cfg: &OfdmConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            subcarriers: cfg.subcarriers,
            symbols: cfg.symbols,
            cp_len: cfg.cp_len,
            fft_m: planner.plan_fft_forward(cfg.symbols),
            ifft_k: planner.plan_fft_inverse(cfg.subcarriers),
        }
    }

    /// Estimate the delay-Doppler bin of the echo in `y` against reference `x`.
    pub fn estimate(
        &self,
        y: &SymbolGrid,
        x: &SymbolGrid,
    ) -> Result<DelayDopplerBin, WaveformError> {
        let (k, m) = (self.subcarriers, self.symbols);
        if y.subcarriers() != k || y.symbols() != m || x.subcarriers() != k || x.symbols() != m {
            return Err(WaveformError::DimensionMismatch {
                found_k: y.subcarriers(),
                found_m: y.symbols(),
                k,
                m,
            });
        }
        if x.power() == 0.0 {
            return Err(WaveformError::ZeroReference);
        }

        // Z[k][m] = Y[k,m] X[k,m]*, laid out subcarrier-major so the symbol
        // transform runs over contiguous rows.
        let mut z = vec![Complex64::new(0.0, 0.0); k * m];
        for mm in 0..m {
            for kk in 0..k {
                z[kk * m + mm] = y.value(kk, mm) * x.value(kk, mm).conj();
            }
        }
        for row in z.chunks_exact_mut(m) {
            self.fft_m.process(row);
        }

        let half = m as i32 / 2;
        let mut col = vec![Complex64::new(0.0, 0.0); k];
        let mut best = f64::NEG_INFINITY;
        let mut best_bin = DelayDopplerBin {
            delay: 0,
            doppler: -half,
        };
        // Scan in ascending linearized index order so ties keep the smallest q.
        for v in -half..half {
            let vm = v.rem_euclid(m as i32) as usize;
            for kk in 0..k {
                col[kk] = z[kk * m + vm];
            }
            self.ifft_k.process(&mut col);
            for (n, s) in col.iter().take(self.cp_len).enumerate() {
                let mag = s.norm_sqr();
                if mag > best {
                    best = mag;
                    best_bin = DelayDopplerBin {
                        delay: n,
                        doppler: v,
                    };
                }
            }
        }
        Ok(best_bin)
    }
}

/// One-shot convenience wrapper around [`MlEstimator`].
pub fn ml_estimate(
    y: &SymbolGrid,
    x: &SymbolGrid,
    cfg: &OfdmConfig,
) -> Result<DelayDopplerBin, WaveformError> {
    MlEstimator::new(cfg).estimate(y, x)
}
