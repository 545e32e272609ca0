//! Closed-form prox map for scaled complex magnitudes.

use super::SolverError;
use num_complex::Complex64;

/// Entrywise minimizer of `alpha_q |r_q| + (rho/2) |r_q - beta_q|^2`:
///
/// `r_q = (|beta_q| - alpha_q / rho)^+ e^{j angle(beta_q)}`,
///
/// i.e. magnitude soft-thresholding along the anchor's phase. A zero anchor
/// maps to zero. Negative `alpha_q` entries inflate the magnitude instead of
/// shrinking it; the same formula stays optimal because the quadratic term
/// still pins the phase to the anchor.
pub fn prox_scaled_magnitude(
    alpha: &[f64],
    beta: &[Complex64],
    rho: f64,
) -> Result<Vec<Complex64>, SolverError> {
    if !(rho > 0.0) {
        return Err(SolverError::NonpositiveRho(rho));
    }
    if alpha.len() != beta.len() {
        return Err(SolverError::BadInput(format!(
            "alpha has {} entries, beta has {}",
            alpha.len(),
            beta.len()
        )));
    }
    Ok(alpha
        .iter()
        .zip(beta)
        .map(|(&a, &b)| {
            let mag = b.norm();
            if mag == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let shrunk = (mag - a / rho).max(0.0);
            b * (shrunk / mag)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_alpha_is_identity() {
        let beta = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.3, 0.1),
            Complex64::new(0.0, 0.0),
        ];
        let r = prox_scaled_magnitude(&[0.0; 3], &beta, 2.0).unwrap();
        for (got, want) in r.iter().zip(&beta) {
            assert!((got - want).norm() < 1e-15);
        }
    }

    #[test]
    fn full_shrinkage_reaches_zero() {
        let r = prox_scaled_magnitude(&[3.0], &[Complex64::new(1.0, 0.0)], 1.0).unwrap();
        assert_eq!(r[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn partial_shrinkage_keeps_phase() {
        let beta = Complex64::from_polar(2.0, std::f64::consts::FRAC_PI_4);
        let r = prox_scaled_magnitude(&[1.0], &[beta], 1.0).unwrap();
        let want = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        assert!((r[0] - want).norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            prox_scaled_magnitude(&[1.0], &[Complex64::new(1.0, 0.0)], 0.0),
            Err(SolverError::NonpositiveRho(_))
        ));
        assert!(matches!(
            prox_scaled_magnitude(&[1.0, 2.0], &[Complex64::new(1.0, 0.0)], 1.0),
            Err(SolverError::BadInput(_))
        ));
    }

    /// 2-D grid-search oracle over the complex plane.
    fn grid_search_min(alpha: f64, beta: Complex64, rho: f64) -> Complex64 {
        let objective = |r: Complex64| alpha * r.norm() + rho / 2.0 * (r - beta).norm_sqr();
        let mut best = Complex64::new(0.0, 0.0);
        let mut best_val = objective(best);
        let span = beta.norm() + alpha / rho + 1.0;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let re = -span + 2.0 * span * i as f64 / steps as f64;
                let im = -span + 2.0 * span * j as f64 / steps as f64;
                let r = Complex64::new(re, im);
                let v = objective(r);
                if v < best_val {
                    best_val = v;
                    best = r;
                }
            }
        }
        best
    }

    #[test]
    fn matches_grid_search_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..25 {
            let alpha = rng.gen_range(-1.0..2.0);
            let rho = rng.gen_range(0.2..3.0);
            let beta = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let got = prox_scaled_magnitude(&[alpha], &[beta], rho).unwrap()[0];
            let oracle = grid_search_min(alpha, beta, rho);
            // The coarse oracle localizes the optimum to its grid pitch.
            let span = beta.norm() + alpha.max(0.0) / rho + 1.0;
            let pitch = 2.0 * span / 400.0;
            assert!(
                (got - oracle).norm() < 2.0 * pitch,
                "alpha={alpha} rho={rho} beta={beta}: got {got}, oracle {oracle}"
            );
        }
    }

    #[test]
    fn magnitude_is_lipschitz_in_anchor_magnitude() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..50 {
            let alpha = rng.gen_range(0.0..2.0);
            let rho = rng.gen_range(0.2..3.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let m1 = rng.gen_range(0.0..3.0);
            let m2 = rng.gen_range(0.0..3.0);
            let r1 = prox_scaled_magnitude(&[alpha], &[Complex64::from_polar(m1, phase)], rho)
                .unwrap()[0];
            let r2 = prox_scaled_magnitude(&[alpha], &[Complex64::from_polar(m2, phase)], rho)
                .unwrap()[0];
            assert!((r1.norm() - r2.norm()).abs() <= (m1 - m2).abs() + 1e-12);
        }
    }
}
