use dfrc_core::solvers::{waterfill_bisection, RateConstraint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Independent oracle: n-dimensional zoomed grid search over the box,
/// keeping the best rate-feasible point.
fn grid_oracle(cap: &[f64], beta: &[f64], rc: &RateConstraint) -> Vec<f64> {
    let n = cap.len();
    let obj = |s: &[f64]| beta.iter().zip(s).map(|(b, s)| b * s).sum::<f64>();
    let mut lo = vec![0.0; n];
    let mut hi = cap.to_vec();
    let steps = 14usize;
    let mut best = cap.to_vec();
    for _stage in 0..14 {
        let mut stage_best: Option<(f64, Vec<f64>)> = None;
        let mut idx = vec![0usize; n];
        loop {
            let point: Vec<f64> = (0..n)
                .map(|q| lo[q] + (hi[q] - lo[q]) * idx[q] as f64 / steps as f64)
                .collect();
            if rc.rate(&point) >= rc.target {
                let v = obj(&point);
                if stage_best.as_ref().map(|(b, _)| v < *b).unwrap_or(true) {
                    stage_best = Some((v, point));
                }
            }
            // odometer over the n-D grid
            let mut q = 0;
            loop {
                if q == n { return best; }
                idx[q] += 1;
                if idx[q] <= steps { break; }
                idx[q] = 0;
                q += 1;
                if q == n {
                    // exhausted: zoom around stage best
                    let (_, ref p) = stage_best.clone().expect("feasible point exists");
                    best = p.clone();
                    for t in 0..n {
                        let w = (hi[t] - lo[t]) / steps as f64;
                        lo[t] = (p[t] - 1.5 * w).max(0.0);
                        hi[t] = (p[t] + 1.5 * w).min(cap[t]);
                    }
                    idx = vec![usize::MAX; 0]; // force restart
                    break;
                }
            }
            if idx.is_empty() { break; }
        }
    }
    best
}

fn main() {
    let mut rng = ChaCha12Rng::seed_from_u64(71);
    let mut worst = 0.0f64;
    let t0 = std::time::Instant::now();
    for trial in 0..60 {
        let n = rng.gen_range(2..4);
        let cap: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        let rc = RateConstraint {
            gains: (0..n).map(|_| rng.gen_range(0.3..6.0)).collect(),
            weights: vec![1.0 / n as f64; n],
            target: 0.0,
        };
        let max_rate = rc.rate(&cap);
        let rc = RateConstraint { target: rng.gen_range(0.1..0.85) * max_rate, ..rc };
        let sol = waterfill_bisection(&cap, &beta, &rc, 1e-12).unwrap();
        let oracle = grid_oracle(&cap, &beta, &rc);
        let obj = |s: &[f64]| beta.iter().zip(s).map(|(b, s)| b * s).sum::<f64>();
        // The grid oracle only visits rate-feasible points, so its objective
        // can only be >= the true optimum minus grid resolution.
        let scale = obj(&cap).max(1.0);
        let diff = (obj(&sol.sigma) - obj(&oracle)) / scale;
        if diff.abs() > worst { worst = diff.abs(); }
        if diff > 1e-6 {
            println!("trial {trial} n={n}: OURS WORSE by {diff:.3e}  ours={:?} oracle={:?}", sol.sigma, oracle);
            println!("   rate ours {:.9} oracle {:.9} target {:.9}", rc.rate(&sol.sigma), rc.rate(&oracle), rc.target);
        }
    }
    println!("worst |obj diff| = {worst:.3e}  dt={:?}", t0.elapsed());
}
