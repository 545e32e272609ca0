//! Communication-channel ingestion: synthetic NLOS tap profiles and
//! user-supplied per-subcarrier gain files.

use crate::config::ConfigError;
use dfrc_core::grid::OfdmConfig;
use dfrc_core::metrics::CommChannel;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::TAU;
use std::path::Path;

/// Draw a synthetic multipath channel and return its per-subcarrier power
/// gains.
///
/// Tap powers decay exponentially at 20/17 dB per tap (so an 18-tap profile
/// spans 20 dB), normalized so the expected per-subcarrier gain equals the
/// configured communication path loss; complex tap gains are then drawn from
/// that profile, deterministically per seed.
pub fn synthesize_channel(
    taps: usize,
    seed: u64,
    cfg: &OfdmConfig,
    noise_density: f64,
) -> CommChannel {
    assert!(taps >= 1, "need at least one tap");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let decay_db_per_tap = 20.0 / 17.0;
    let profile: Vec<f64> = (0..taps)
        .map(|t| 10f64.powf(-decay_db_per_tap * t as f64 / 10.0))
        .collect();
    let total: f64 = profile.iter().sum();
    let mean_gain = 10f64.powf(-cfg.comm_loss_db / 10.0);

    let gains_t: Vec<Complex64> = profile
        .iter()
        .map(|p| {
            let sd = (p * mean_gain / total / 2.0).sqrt();
            Complex64::new(
                sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
                sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            )
        })
        .collect();

    let k = cfg.subcarriers;
    let h: Vec<f64> = (0..k)
        .map(|kk| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, g) in gains_t.iter().enumerate() {
                acc += g * Complex64::from_polar(1.0, -TAU * kk as f64 * t as f64 / k as f64);
            }
            acc.norm_sqr()
        })
        .collect();

    CommChannel::new(h, noise_density).expect("synthetic gains are non-negative")
}

/// Read per-subcarrier power gains from a `k,gain` file (one row per
/// subcarrier; every index 0..K-1 must appear exactly once).
pub fn load_channel_file(
    path: &Path,
    cfg: &OfdmConfig,
    noise_density: f64,
) -> Result<CommChannel, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut gains = vec![f64::NAN; cfg.subcarriers];
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(ConfigError::Parse {
                line: idx + 1,
                msg: format!("expected `k,gain`, got '{line}'"),
            });
        }
        let k: usize = parts[0].parse().map_err(|e| ConfigError::Parse {
            line: idx + 1,
            msg: format!("subcarrier index: {e}"),
        })?;
        let gain: f64 = parts[1].parse().map_err(|e| ConfigError::Parse {
            line: idx + 1,
            msg: format!("gain: {e}"),
        })?;
        if k >= cfg.subcarriers {
            return Err(ConfigError::Parse {
                line: idx + 1,
                msg: format!("subcarrier index {k} outside 0..{}", cfg.subcarriers),
            });
        }
        if !gains[k].is_nan() {
            return Err(ConfigError::Parse {
                line: idx + 1,
                msg: format!("duplicate subcarrier index {k}"),
            });
        }
        gains[k] = gain;
    }
    if let Some(k) = gains.iter().position(|g| g.is_nan()) {
        return Err(ConfigError::Validation {
            key: "channel_file".into(),
            msg: format!("no gain for subcarrier {k}"),
        });
    }
    CommChannel::new(gains, noise_density).map_err(|e| ConfigError::Validation {
        key: "channel_file".into(),
        msg: e.to_string(),
    })
}
