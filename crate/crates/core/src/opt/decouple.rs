//! Low-complexity Gaussian design by time/frequency decoupling.
//!
//! The distribution on every OFDM symbol is a scaled copy of one common
//! per-subcarrier profile: the symbol scales come from the PSK designer, and
//! the profile (second moments and variances over 2K entries, unit budget) is
//! optimized by the same block coordinate descent as the full designer, with
//! coefficients folded through the lifting. The rate constraint couples every
//! symbol scale into each profile entry; its per-iteration surrogate is a
//! tangent lower bound with the same single-log shape as the full constraint,
//! so the closed-form water-filling update applies unchanged.

use super::gaussian::{BcdEngine, GaussianSolution};
use super::psk::optimize_psk;
use super::steering::SidelobeBasis;
use super::{OptError, OptimizerOptions};
use crate::grid::{FractionalDoppler, OfdmConfig};
use crate::metrics::{aubop, CommChannel, GaussianInput};
use crate::solvers::{capacity_waterfill, RateConstraint, SolverError};
use std::f64::consts::TAU;

/// True average rate of a lifted profile:
/// `(1/(2KM)) sum_m sum_q log2(1 + p_m C'_q sigma_q)`.
fn decoupled_rate(sigma_k: &[f64], symbol_power: &[f64], c_prime: &[f64], km2: f64) -> f64 {
    let mut acc = 0.0;
    for &pm in symbol_power {
        for (s, c) in sigma_k.iter().zip(c_prime) {
            if *c > 0.0 && *s > 0.0 {
                acc += (1.0 + pm * c * s).log2();
            }
        }
    }
    acc / km2
}

/// Tangent lower-bound coefficients of the decoupled rate at `sigma0`:
/// per-coordinate weights f1 and the offset f2 such that
/// `f1^T log2(1 + G sigma) + f2 <= rate(sigma)` with equality at `sigma0`.
fn rate_surrogate(
    sigma0: &[f64],
    symbol_power: &[f64],
    c_prime: &[f64],
    gains: &[f64],
    km2: f64,
) -> (Vec<f64>, f64) {
    let n = sigma0.len();
    let mut f1 = vec![0.0; n];
    for (q, &c) in c_prime.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        let g = gains[q];
        let mut acc = 0.0;
        for &pm in symbol_power {
            acc += pm * c * (1.0 + g * sigma0[q]) / (g * (1.0 + pm * c * sigma0[q]));
        }
        f1[q] = acc / km2;
    }
    let mut f2 = decoupled_rate(sigma0, symbol_power, c_prime, km2);
    for q in 0..n {
        if gains[q] > 0.0 && sigma0[q] > 0.0 {
            f2 -= f1[q] * (1.0 + gains[q] * sigma0[q]).log2();
        }
    }
    (f1, f2)
}

/// Largest rate reachable under the lifting: all power to the variances,
/// allocated over the unit profile simplex by bisection on the water level.
fn decoupled_capacity(symbol_power: &[f64], c_prime: &[f64], km2: f64) -> Vec<f64> {
    let n = c_prime.len();
    // Marginal rate of coordinate q at level s.
    let marginal = |q: usize, s: f64| -> f64 {
        let c = c_prime[q];
        if c <= 0.0 {
            return 0.0;
        }
        symbol_power
            .iter()
            .map(|&pm| pm * c / ((1.0 + pm * c * s) * std::f64::consts::LN_2))
            .sum::<f64>()
            / km2
    };
    let sigma_at = |mu: f64| -> Vec<f64> {
        (0..n)
            .map(|q| {
                if marginal(q, 0.0) <= mu {
                    return 0.0;
                }
                let (mut lo, mut hi) = (0.0, 1.0);
                while marginal(q, hi) > mu && hi < 1e12 {
                    hi *= 2.0;
                }
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if marginal(q, mid) > mu {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            })
            .collect()
    };
    let mut mu_hi = (0..n).map(|q| marginal(q, 0.0)).fold(0.0f64, f64::max);
    if mu_hi == 0.0 {
        return vec![0.0; n];
    }
    let mut mu_lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (mu_lo + mu_hi);
        if mid == mu_lo || mid == mu_hi {
            break;
        }
        let total: f64 = sigma_at(mid).iter().sum();
        if total > 1.0 {
            mu_lo = mid;
        } else {
            mu_hi = mid;
        }
    }
    sigma_at(mu_hi)
}

/// Gaussian design with the distribution decoupled across time and frequency.
///
/// Step 1 shapes the symbol powers with [`optimize_psk`]; step 2 runs the
/// block coordinate descent over the per-subcarrier profile under the unit
/// budget and the lifted rate constraint; the result is lifted back to the
/// full grid.
pub fn optimize_decoupled(
    cfg: &OfdmConfig,
    p_max: f64,
    sigma2: f64,
    ch: &CommChannel,
    rate_target: f64,
    eps_set: &[FractionalDoppler],
    opts: &OptimizerOptions,
) -> Result<GaussianSolution, OptError> {
    if ch.gains().len() != cfg.subcarriers {
        return Err(OptError::BadInput(format!(
            "channel has {} subcarrier gains, config needs {}",
            ch.gains().len(),
            cfg.subcarriers
        )));
    }
    let n_full = 2 * cfg.subcarriers * cfg.symbols;
    let km2 = n_full as f64;
    if rate_target > 0.0 {
        let gains_full = ch.rate_gains(cfg);
        let weights = vec![1.0 / km2; n_full];
        let (_, capacity) = capacity_waterfill(&gains_full, &weights, p_max);
        if rate_target > capacity {
            return Err(OptError::Solver(SolverError::InfeasibleRate {
                target: rate_target,
                achievable: capacity,
            }));
        }
    }

    let psk = optimize_psk(cfg, p_max, sigma2, eps_set, opts)?;
    let symbol_power = psk.symbol_power;
    let c_prime = ch.rate_gains_per_subcarrier(cfg);
    let n = 2 * cfg.subcarriers;
    let p_peak = symbol_power.iter().cloned().fold(0.0f64, f64::max);
    let gains: Vec<f64> = c_prime.iter().map(|c| p_peak * c).collect();

    // Feasibility under the lifting, and a feasible starting profile.
    let mut sigma_k = vec![0.0; n];
    if rate_target > 0.0 {
        let sigma_cap = decoupled_capacity(&symbol_power, &c_prime, km2);
        let cap_rate = decoupled_rate(&sigma_cap, &symbol_power, &c_prime, km2);
        if rate_target > cap_rate {
            return Err(OptError::Solver(SolverError::InfeasibleRate {
                target: rate_target,
                achievable: cap_rate,
            }));
        }
        // Smallest scaling of the capacity profile that meets the target.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let scaled: Vec<f64> = sigma_cap.iter().map(|s| mid * s).collect();
            if decoupled_rate(&scaled, &symbol_power, &c_prime, km2) >= rate_target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        sigma_k = sigma_cap.iter().map(|s| hi * s).collect();
    }
    let spent: f64 = sigma_k.iter().sum();
    let mut pbar_k: Vec<f64> = sigma_k
        .iter()
        .map(|s| s + (1.0 - spent).max(0.0) / n as f64)
        .collect();

    // Peak columns collapse to constants: the lifted peak quadratic form is
    // |p^T f^D_{0,eps}|^2 (1^T pbar_K)^2.
    let peaks: Vec<(Vec<f64>, Vec<f64>)> = eps_set
        .iter()
        .map(|eps| {
            let (mut dr, mut di) = (0.0, 0.0);
            for (m, pm) in symbol_power.iter().enumerate() {
                let phase = TAU * eps.value() * m as f64 / cfg.symbols as f64;
                dr += pm * phase.cos();
                di += pm * phase.sin();
            }
            (vec![dr; n / 2], vec![di; n / 2])
        })
        .collect();

    let basis = SidelobeBasis::decoupled(cfg.subcarriers, cfg.cp_len, &symbol_power, eps_set);
    let mut engine = BcdEngine::new(
        basis,
        peaks,
        (cfg.num_bins() - 1) as f64,
        symbol_power.iter().map(|p| p * p).sum::<f64>(),
        1.0,
        opts,
    );

    let rate_builder = |sigma0: &[f64]| {
        let (f1, f2) = rate_surrogate(sigma0, &symbol_power, &c_prime, &gains, km2);
        RateConstraint {
            gains: gains.clone(),
            weights: f1,
            target: rate_target - f2,
        }
    };

    let lift = |pbar_k: &[f64], sigma_k: &[f64]| -> Result<GaussianInput, OptError> {
        let km = cfg.subcarriers * cfg.symbols;
        let mut pbar = vec![0.0; 2 * km];
        let mut sigma = vec![0.0; 2 * km];
        for comp in 0..2 {
            for (m, &pm) in symbol_power.iter().enumerate() {
                for k in 0..cfg.subcarriers {
                    let dst = comp * km + m * cfg.subcarriers + k;
                    let src = comp * cfg.subcarriers + k;
                    pbar[dst] = pm * pbar_k[src];
                    sigma[dst] = pm * sigma_k[src];
                }
            }
        }
        Ok(GaussianInput::new(
            pbar,
            sigma,
            cfg.subcarriers,
            cfg.symbols,
        )?)
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for outer in 0..opts.bcd_max_iters {
        iterations = outer + 1;
        engine.update_pbar(&mut pbar_k, &sigma_k)?;
        if rate_target > 0.0 {
            engine.update_sigma(&pbar_k, &mut sigma_k, &rate_builder)?;
        }
        let objective = aubop(&lift(&pbar_k, &sigma_k)?, cfg, sigma2, eps_set)?;
        let done = trace
            .last()
            .map(|prev: &f64| {
                (prev - objective).abs() <= opts.rel_tol * objective.abs().max(1e-300)
            })
            .unwrap_or(false);
        trace.push(objective);
        if done {
            converged = true;
            break;
        }
    }

    let input = lift(&pbar_k, &sigma_k)?;
    let low_snr_valid = p_max / (2.0 * sigma2) <= 1.0;
    Ok(GaussianSolution {
        input,
        objective_trace: trace,
        converged,
        iterations,
        low_snr_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::epsilon_samples;
    use crate::metrics::{
        achievable_rate, mean_peak_magnitude, pairwise_second_moment,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg(k: usize, kg: usize, m: usize) -> OfdmConfig {
        OfdmConfig::new(k, kg, m, 90.909e6, 24e9, 1e-13, 140.0, 108.0).unwrap()
    }

    fn flat_channel(k: usize) -> CommChannel {
        CommChannel::flat(k, 10f64.powf(-10.8), 10f64.powf(-20.8))
    }

    fn lift(
        cfg: &OfdmConfig,
        symbol_power: &[f64],
        pbar_k: &[f64],
        sigma_k: &[f64],
    ) -> GaussianInput {
        let km = cfg.subcarriers * cfg.symbols;
        let mut pbar = vec![0.0; 2 * km];
        let mut sigma = vec![0.0; 2 * km];
        for comp in 0..2 {
            for (m, &pm) in symbol_power.iter().enumerate() {
                for k in 0..cfg.subcarriers {
                    pbar[comp * km + m * cfg.subcarriers + k] =
                        pm * pbar_k[comp * cfg.subcarriers + k];
                    sigma[comp * km + m * cfg.subcarriers + k] =
                        pm * sigma_k[comp * cfg.subcarriers + k];
                }
            }
        }
        GaussianInput::new(pbar, sigma, cfg.subcarriers, cfg.symbols).unwrap()
    }

    #[test]
    fn lifted_second_moments_match_reduced_coefficients() {
        // gamma_{v,eps} |f^R_n . tot_K|^2 + 2 ||p||^2 (2 pbar_K.sigma_K - ||sigma_K||^2)
        // must equal the full-grid second moment of the lifted input.
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let c = cfg(4, 2, 4);
        let p: Vec<f64> = (0..4).map(|_| 0.2 + rng.gen::<f64>()).collect();
        let pbar_k: Vec<f64> = (0..8).map(|_| 0.1 + rng.gen::<f64>()).collect();
        let sigma_k: Vec<f64> = pbar_k.iter().map(|v| v * rng.gen::<f64>()).collect();
        let lifted = lift(&c, &p, &pbar_k, &sigma_k);
        let p_norm_sq: f64 = p.iter().map(|v| v * v).sum();
        let tot: Vec<f64> = (0..4).map(|k| pbar_k[k] + pbar_k[4 + k]).collect();
        let h_k: f64 = pbar_k
            .iter()
            .zip(&sigma_k)
            .map(|(pk, sk)| sk * (2.0 * pk - sk))
            .sum();
        for (n, v, e) in [(1usize, 0i32, 0.21), (0, 1, -0.4), (1, -2, 0.0)] {
            let eps = FractionalDoppler::new(e).unwrap();
            let full = pairwise_second_moment(&lifted, n, v, eps);
            // Reduced: gamma  |sum_k tot_k e^{j 2 pi n k / K}|^2 + 2||p||^2 h.
            let step_m = -TAU * (v as f64 - e) / 4.0;
            let (mut dr, mut di) = (0.0, 0.0);
            for (m, pm) in p.iter().enumerate() {
                dr += pm * (step_m * m as f64).cos();
                di += pm * (step_m * m as f64).sin();
            }
            let gamma = dr * dr + di * di;
            let (mut ar, mut ai) = (0.0, 0.0);
            for (k, t) in tot.iter().enumerate() {
                let ph = TAU * n as f64 * k as f64 / 4.0;
                ar += t * ph.cos();
                ai += t * ph.sin();
            }
            let reduced = gamma * (ar * ar + ai * ai) + 2.0 * p_norm_sq * h_k;
            assert!(
                (full - reduced).abs() < 1e-9 * full.abs().max(1.0),
                "triple ({n},{v},{e}): full {full} vs reduced {reduced}"
            );
        }
        // Peak identity: |p^T f^D_{0,eps}| * 1^T pbar_K.
        for e in epsilon_samples(3) {
            let full = mean_peak_magnitude(&lifted, e);
            let (mut dr, mut di) = (0.0, 0.0);
            for (m, pm) in p.iter().enumerate() {
                let ph = TAU * e.value() * m as f64 / 4.0;
                dr += pm * ph.cos();
                di += pm * ph.sin();
            }
            let reduced = (dr * dr + di * di).sqrt() * pbar_k.iter().sum::<f64>();
            assert!((full - reduced).abs() < 1e-9 * full.max(1.0));
        }
    }

    #[test]
    fn rate_surrogate_lower_bounds_true_rate() {
        let mut rng = ChaCha12Rng::seed_from_u64(67);
        let c = cfg(4, 2, 4);
        let ch = flat_channel(4);
        let c_prime = ch.rate_gains_per_subcarrier(&c);
        let p: Vec<f64> = (0..4).map(|_| 0.1 + rng.gen::<f64>()).collect();
        let p_peak = p.iter().cloned().fold(0.0f64, f64::max);
        let gains: Vec<f64> = c_prime.iter().map(|cq| p_peak * cq).collect();
        let km2 = (2 * 4 * 4) as f64;
        let sigma0: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 0.2).collect();
        let (f1, f2) = rate_surrogate(&sigma0, &p, &c_prime, &gains, km2);

        // Equality at the expansion point.
        let surrogate_at = |s: &[f64]| -> f64 {
            f2 + f1
                .iter()
                .zip(&gains)
                .zip(s)
                .map(|((w, g), sv)| {
                    if *g > 0.0 && *sv > 0.0 {
                        w * (1.0 + g * sv).log2()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        };
        let true0 = decoupled_rate(&sigma0, &p, &c_prime, km2);
        assert!((surrogate_at(&sigma0) - true0).abs() < 1e-12);
        // Lower bound everywhere else.
        for _ in 0..50 {
            let s: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 0.5).collect();
            let t = decoupled_rate(&s, &p, &c_prime, km2);
            assert!(
                surrogate_at(&s) <= t + 1e-10,
                "surrogate exceeds the true rate"
            );
        }
    }

    #[test]
    fn full_run_respects_all_constraints() {
        let c = cfg(8, 4, 4);
        let ch = flat_channel(8);
        let eps = epsilon_samples(4);
        let gains_full = ch.rate_gains(&c);
        let nf = gains_full.len();
        let weights = vec![1.0 / nf as f64; nf];
        let (_, capacity) = capacity_waterfill(&gains_full, &weights, 1.0);
        let target = 0.4 * capacity;
        let opts = OptimizerOptions::default();
        let sol = optimize_decoupled(&c, 1.0, 40.0, &ch, target, &eps, &opts).unwrap();

        assert!(sol.input.total_power() <= 1.0 + 1e-8);
        let rate = achievable_rate(sol.input.sigma(), &gains_full);
        assert!(
            rate >= target - 1e-8,
            "lifted rate {rate} below target {target}"
        );
        for pair in sol.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-8 * pair[0].abs().max(1.0));
        }
        // Lifted structure: cell moments proportional across symbols.
        let base_m = 0;
        for m in 1..4 {
            let num = sol.input.cell_power(0, m);
            let den = sol.input.cell_power(0, base_m).max(1e-300);
            let ratio = num / den;
            for k in 1..8 {
                let r2 = sol.input.cell_power(k, m) / sol.input.cell_power(k, base_m).max(1e-300);
                assert!(
                    (r2 - ratio).abs() < 1e-6 * ratio.max(1e-12),
                    "lifting broken at k={k}, m={m}"
                );
            }
        }
    }

    #[test]
    fn infeasible_decoupled_rate_reports_achievable() {
        let c = cfg(8, 4, 4);
        let ch = flat_channel(8);
        let eps = epsilon_samples(2);
        let err = optimize_decoupled(
            &c,
            1.0,
            40.0,
            &ch,
            1e3,
            &eps,
            &OptimizerOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            OptError::Solver(SolverError::InfeasibleRate { .. })
        ));
    }
}
