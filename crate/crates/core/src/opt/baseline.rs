//! Optimization-free reference allocations.
//!
//! The windowed kinds spread power uniformly over subcarriers and shape it
//! across OFDM symbols; the spectrum-shaped kinds follow the classic
//! information (uniform spectrum) and estimation (edge subcarriers) heuristics.

use super::OptError;
use crate::grid::{OfdmConfig, PowerGrid};
use crate::metrics::{bessel, CommChannel, GaussianInput};
use crate::solvers::{capacity_waterfill, waterfill_bisection, RateConstraint, SolverError};
use std::str::FromStr;

/// Baseline power-allocation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Flat over the whole grid.
    Uniform,
    /// Hamming window across symbols, uniform across subcarriers.
    Hamming,
    /// Kaiser window across symbols, uniform across subcarriers.
    Kaiser,
    /// Information-rate heuristic: a uniform spectrum (coincides with Uniform).
    Rmi,
    /// Estimation-bound heuristic: all power on the two edge subcarriers.
    Crb,
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "hamming" => Ok(Self::Hamming),
            "kaiser" => Ok(Self::Kaiser),
            "rmi" => Ok(Self::Rmi),
            "crb" => Ok(Self::Crb),
            other => Err(format!(
                "unknown baseline kind '{other}' (expected uniform|hamming|kaiser|rmi|crb)"
            )),
        }
    }
}

/// Symmetric Hamming window coefficients.
fn hamming_window(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m)
        .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (m - 1) as f64).cos())
        .collect()
}

/// Symmetric Kaiser window coefficients with shape parameter beta.
fn kaiser_window(m: usize, beta: f64) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    let denom = bessel::i0_series(beta);
    (0..m)
        .map(|i| {
            let t = 2.0 * i as f64 / (m - 1) as f64 - 1.0;
            bessel::i0_series(beta * (1.0 - t * t).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Build a baseline power grid at the given budget.
///
/// `kaiser_beta` only affects the Kaiser kind.
pub fn baseline_allocation(
    kind: BaselineKind,
    cfg: &OfdmConfig,
    p_max: f64,
    kaiser_beta: f64,
) -> PowerGrid {
    let (k, m) = (cfg.subcarriers, cfg.symbols);
    match kind {
        BaselineKind::Uniform | BaselineKind::Rmi => PowerGrid::uniform(k, m, p_max),
        BaselineKind::Hamming | BaselineKind::Kaiser => {
            let w = match kind {
                BaselineKind::Hamming => hamming_window(m),
                _ => kaiser_window(m, kaiser_beta),
            };
            let total: f64 = w.iter().sum();
            let pm: Vec<f64> = w.iter().map(|v| v * p_max / total).collect();
            PowerGrid::from_symbol_power(&pm, k, p_max)
                .expect("window coefficients are non-negative and sum to the budget")
        }
        BaselineKind::Crb => {
            let mut values = vec![0.0; k * m];
            let per_edge = p_max / (2.0 * m as f64);
            for mm in 0..m {
                values[mm * k] = per_edge;
                values[mm * k + (k - 1)] = per_edge;
            }
            PowerGrid::new(values, k, m, p_max).expect("edge allocation meets the budget")
        }
    }
}

/// Gaussian-input counterpart of the spectrum-shaped baselines.
///
/// First finds the minimal total variance meeting the rate constraint by
/// water-filling, then assigns the remaining budget to the symbol means in
/// the kind's shape (uniform for Rmi, edge subcarriers for Crb).
pub fn baseline_gaussian(
    kind: BaselineKind,
    cfg: &OfdmConfig,
    p_max: f64,
    ch: &CommChannel,
    rate_target: f64,
) -> Result<GaussianInput, OptError> {
    if !matches!(kind, BaselineKind::Rmi | BaselineKind::Crb) {
        return Err(OptError::BadInput(format!(
            "baseline_gaussian supports rmi and crb, not {kind:?}"
        )));
    }
    if !(p_max > 0.0) {
        return Err(OptError::BadInput(format!(
            "power budget must be positive, got {p_max}"
        )));
    }
    let n = 2 * cfg.subcarriers * cfg.symbols;
    let gains = ch.rate_gains(cfg);
    let weights = vec![1.0 / n as f64; n];

    let sigma = if rate_target > 0.0 {
        let (_, capacity) = capacity_waterfill(&gains, &weights, p_max);
        if rate_target > capacity {
            return Err(OptError::Solver(SolverError::InfeasibleRate {
                target: rate_target,
                achievable: capacity,
            }));
        }
        let rc = RateConstraint {
            gains,
            weights,
            target: rate_target,
        };
        waterfill_bisection(&vec![p_max; n], &vec![1.0; n], &rc, 1e-12)?.sigma
    } else {
        vec![0.0; n]
    };

    let spent: f64 = sigma.iter().sum();
    let residual = (p_max - spent).max(0.0);
    let shape = baseline_allocation(kind, cfg, residual, 0.0);
    let km = cfg.subcarriers * cfg.symbols;
    let mut pbar = sigma.clone();
    for (idx, cell) in shape.values().iter().enumerate() {
        pbar[idx] += cell / 2.0;
        pbar[km + idx] += cell / 2.0;
    }
    Ok(GaussianInput::new(
        pbar,
        sigma,
        cfg.subcarriers,
        cfg.symbols,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::achievable_rate;

    fn cfg(k: usize, kg: usize, m: usize) -> OfdmConfig {
        OfdmConfig::new(k, kg, m, 90.909e6, 24e9, 1e-13, 140.0, 108.0).unwrap()
    }

    #[test]
    fn uniform_grid_values() {
        let c = cfg(2, 1, 2);
        let p = baseline_allocation(BaselineKind::Uniform, &c, 4.0, 0.0);
        assert!(p.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        // RMI coincides with uniform.
        let r = baseline_allocation(BaselineKind::Rmi, &c, 4.0, 0.0);
        assert_eq!(p.values(), r.values());
    }

    #[test]
    fn crb_concentrates_on_edge_subcarriers() {
        // Degenerate single-symbol geometry exercises just the shape.
        let c = OfdmConfig {
            subcarriers: 4,
            cp_len: 2,
            symbols: 1,
            bandwidth_hz: 1e6,
            carrier_hz: 1e9,
            noise_power: 1e-12,
            radar_loss_db: 140.0,
            comm_loss_db: 108.0,
        };
        let p = baseline_allocation(BaselineKind::Crb, &c, 4.0, 0.0);
        assert_eq!(p.values(), &[2.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn hamming_matches_window_formula() {
        let c = OfdmConfig {
            symbols: 4,
            ..cfg(8, 4, 16)
        };
        let p = baseline_allocation(BaselineKind::Hamming, &c, 3.0, 0.0);
        let pm = p.symbol_power();
        // Window formula oracle.
        let w: Vec<f64> = (0..4)
            .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / 3.0).cos())
            .collect();
        let total: f64 = w.iter().sum();
        for (got, want) in pm.iter().zip(w.iter().map(|v| v * 3.0 / total)) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((p.total_power() - 3.0).abs() < 1e-12);
        // Uniform across subcarriers.
        for m in 0..4 {
            for k in 0..8 {
                assert!((p.value(k, m) - pm[m] / 8.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kaiser_window_is_symmetric_and_peaked() {
        let c = cfg(8, 4, 16);
        let p = baseline_allocation(BaselineKind::Kaiser, &c, 1.0, 6.0);
        let pm = p.symbol_power();
        for i in 0..8 {
            assert!((pm[i] - pm[15 - i]).abs() < 1e-12, "asymmetric at {i}");
        }
        let peak = pm.iter().cloned().fold(f64::MIN, f64::max);
        assert!(pm[7] == peak || pm[8] == peak);
        assert!(pm[0] < peak / 10.0, "Kaiser beta=6 edges should be deep");
    }

    #[test]
    fn gaussian_baseline_zero_rate_is_all_means() {
        let c = cfg(8, 4, 4);
        let ch = CommChannel::flat(8, 1e-10, 1e-20);
        let g = baseline_gaussian(BaselineKind::Rmi, &c, 2.0, &ch, 0.0).unwrap();
        assert!(g.sigma().iter().all(|&s| s == 0.0));
        assert!((g.total_power() - 2.0).abs() < 1e-9);
        // Means take the uniform shape.
        let cell = g.cell_power(3, 2);
        assert!((cell - 2.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_baseline_max_rate_is_all_variance() {
        let c = cfg(8, 4, 4);
        let ch = CommChannel::flat(8, 1e-10, 1e-20);
        let gains = ch.rate_gains(&c);
        let n = gains.len();
        let weights = vec![1.0 / n as f64; n];
        let (_, capacity) = capacity_waterfill(&gains, &weights, 2.0);
        let g = baseline_gaussian(BaselineKind::Rmi, &c, 2.0, &ch, capacity).unwrap();
        let mean_power: f64 = g.total_power() - g.sigma().iter().sum::<f64>();
        assert!(mean_power < 1e-6 * g.total_power());
        // And beyond capacity the request fails fast, naming the maximum.
        match baseline_gaussian(BaselineKind::Rmi, &c, 2.0, &ch, capacity * 1.01) {
            Err(OptError::Solver(SolverError::InfeasibleRate { achievable, .. })) => {
                assert!((achievable - capacity).abs() < 1e-9 * capacity);
            }
            other => panic!("expected InfeasibleRate, got {other:?}"),
        }
    }

    #[test]
    fn gaussian_baseline_intermediate_rate_flat_channel() {
        // Flat channel: minimal-variance waterfill is flat, residual means
        // flat for rmi; cross-checked against the closed form per entry.
        let c = cfg(4, 2, 2);
        let ch = CommChannel::flat(4, 1e-10, 1e-20);
        let gains = ch.rate_gains(&c);
        let n = gains.len();
        let target = 1.5;
        let g = baseline_gaussian(BaselineKind::Rmi, &c, 5.0, &ch, target).unwrap();
        let sig0 = g.sigma()[0];
        for &s in g.sigma() {
            assert!((s - sig0).abs() < 1e-9);
        }
        // Rate met with equality.
        let rate = achievable_rate(g.sigma(), &gains);
        assert!(rate >= target && rate - target < 1e-6);
        // Per-entry closed form: log2(1 + C s) = target per entry.
        let want = (2f64.powf(target) - 1.0) / gains[0];
        assert!((sig0 - want).abs() < 1e-6 * want);
        let _ = n;
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(BaselineKind::from_str("kaiser").unwrap(), BaselineKind::Kaiser);
        assert_eq!(BaselineKind::from_str("CRB").unwrap(), BaselineKind::Crb);
        assert!(BaselineKind::from_str("windowed").is_err());
    }
}
