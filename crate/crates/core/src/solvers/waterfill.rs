//! Rate-constrained variance allocation by KKT closed form plus bisection.

use super::SolverError;

/// Weighted-rate constraint `sum_q weights_q log2(1 + gains_q sigma_q) >= target`.
///
/// For the full symbol grid the weights are all `1/(2KM)` and the gains are
/// the diagonal of the rate matrix; the decoupled per-subcarrier variant
/// passes its surrogate coefficients instead.
#[derive(Debug, Clone)]
pub struct RateConstraint {
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub target: f64,
}

impl RateConstraint {
    /// Weighted rate of an allocation under this constraint's coefficients.
    pub fn rate(&self, sigma: &[f64]) -> f64 {
        self.gains
            .iter()
            .zip(&self.weights)
            .zip(sigma)
            .map(|((&g, &w), &s)| {
                if g > 0.0 && s > 0.0 {
                    w * (1.0 + g * s).log2()
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Minimizer of `beta^T sigma` with its rate multiplier.
#[derive(Debug, Clone)]
pub struct WaterfillSolution {
    pub sigma: Vec<f64>,
    /// Lagrange multiplier of the rate constraint; zero when the target is
    /// already met at `sigma = 0`.
    pub multiplier: f64,
}

/// Per-coordinate closed form at multiplier `u`:
/// clamp(`u w_q / beta_q - 1 / G_q`, 0, cap_q), with the degenerate branches
/// `sigma_q = 0` for zero gain and `sigma_q = cap_q` for (near-)zero cost.
fn sigma_at(u: f64, cap: &[f64], beta: &[f64], rate: &RateConstraint, beta_floor: f64) -> Vec<f64> {
    cap.iter()
        .zip(beta)
        .zip(rate.gains.iter().zip(&rate.weights))
        .map(|((&cap_q, &b), (&g, &w))| {
            if g <= 0.0 || cap_q <= 0.0 {
                return 0.0;
            }
            if b <= beta_floor {
                return if u > 0.0 { cap_q } else { 0.0 };
            }
            (u * w / b - 1.0 / g).clamp(0.0, cap_q)
        })
        .collect()
}

/// Minimize `beta^T sigma` subject to the weighted rate constraint and
/// `0 <= sigma <= cap`, via the three-branch KKT closed form evaluated at a
/// bisection multiplier.
///
/// The bisection bracket for the multiplier starts at `[0, 1]` and doubles the
/// upper end until the rate target is met, then narrows to `1e-10` relative.
/// The returned allocation always satisfies the rate constraint; `tol` bounds
/// how far above the target the achieved rate may sit when the constraint
/// binds.
pub fn waterfill_bisection(
    cap: &[f64],
    beta: &[f64],
    rate: &RateConstraint,
    tol: f64,
) -> Result<WaterfillSolution, SolverError> {
    let n = cap.len();
    if beta.len() != n || rate.gains.len() != n || rate.weights.len() != n {
        return Err(SolverError::BadInput(format!(
            "waterfill lengths disagree: cap {n}, beta {}, gains {}, weights {}",
            beta.len(),
            rate.gains.len(),
            rate.weights.len()
        )));
    }
    if beta.iter().any(|&b| b < 0.0) {
        return Err(SolverError::BadInput(
            "waterfill cost vector must be non-negative".into(),
        ));
    }
    if rate.target <= 0.0 {
        return Ok(WaterfillSolution {
            sigma: vec![0.0; n],
            multiplier: 0.0,
        });
    }

    let beta_floor = 1e-14 * beta.iter().fold(0.0f64, |acc, &b| acc.max(b)).max(1e-300);
    let max_rate = rate.rate(cap);
    let feas_slack = 1e-12 * max_rate.abs().max(1.0);
    if rate.target > max_rate + feas_slack {
        return Err(SolverError::InfeasibleRate {
            target: rate.target,
            achievable: max_rate,
        });
    }
    if rate.target >= max_rate - feas_slack {
        return Ok(WaterfillSolution {
            sigma: cap.to_vec(),
            multiplier: f64::INFINITY,
        });
    }

    // Bracket the multiplier.
    let mut u_lo = 0.0f64;
    let mut u_hi = 1.0f64;
    for _ in 0..2000 {
        let s = sigma_at(u_hi, cap, beta, rate, beta_floor);
        if rate.rate(&s) >= rate.target {
            break;
        }
        u_lo = u_hi;
        u_hi *= 2.0;
    }

    let tol_rate = tol.max(1e-14) * rate.target.abs().max(1.0);
    for _ in 0..300 {
        if u_hi - u_lo <= 1e-10 * u_hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (u_lo + u_hi);
        let s = sigma_at(mid, cap, beta, rate, beta_floor);
        let r = rate.rate(&s);
        if r >= rate.target {
            u_hi = mid;
            if r - rate.target <= tol_rate {
                break;
            }
        } else {
            u_lo = mid;
        }
    }
    let sigma = sigma_at(u_hi, cap, beta, rate, beta_floor);
    Ok(WaterfillSolution {
        sigma,
        multiplier: u_hi,
    })
}

/// Capacity-achieving water-fill: maximize the weighted rate subject to a
/// total power budget. Returns the allocation and the rate it achieves.
pub fn capacity_waterfill(
    gains: &[f64],
    weights: &[f64],
    budget: f64,
) -> (Vec<f64>, f64) {
    let n = gains.len();
    assert_eq!(weights.len(), n, "gains and weights must have equal length");
    let rc = RateConstraint {
        gains: gains.to_vec(),
        weights: weights.to_vec(),
        target: 0.0,
    };
    if budget <= 0.0 {
        return (vec![0.0; n], 0.0);
    }
    let sigma_of = |nu: f64| -> Vec<f64> {
        gains
            .iter()
            .zip(weights)
            .map(|(&g, &w)| {
                if g <= 0.0 || w <= 0.0 {
                    0.0
                } else {
                    (w / nu - 1.0 / g).max(0.0)
                }
            })
            .collect()
    };
    let nu_max = gains
        .iter()
        .zip(weights)
        .fold(0.0f64, |acc, (&g, &w)| acc.max(g.max(0.0) * w.max(0.0)));
    if nu_max == 0.0 {
        return (vec![0.0; n], 0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = nu_max;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let power: f64 = sigma_of(mid).iter().sum();
        if power > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = sigma_of(hi);
    let rate = rc.rate(&sigma);
    (sigma, rate)
}
