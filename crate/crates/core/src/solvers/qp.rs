//! Dense primal active-set solver for convex quadratic programs.
//!
//! Minimizes `(1/2) x^T H x + c^T x` subject to `A x <= b` and `l <= x <= u`,
//! with H symmetric positive semidefinite. The working set holds bound
//! constraints plus a (typically small) set of general rows; each change of the
//! working set updates a Cholesky factor of the free-variable block
//! incrementally, so warm starts from a previous solution are cheap.
//!
//! Semidefinite Hessians receive a vanishing diagonal regularization
//! (`1e-12` of the largest diagonal entry) during factorization; anything
//! indefinite beyond `-1e-8` of that scale is rejected.

use super::SolverError;

/// A convex QP instance. `hessian` and `constraints` are row-major.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric PSD matrix of the quadratic term `(1/2) x^T H x`, n x n.
    pub hessian: Vec<f64>,
    /// Linear term c of length n.
    pub linear: Vec<f64>,
    /// General inequality rows `a_i^T x <= b_i`, m x n (may be empty).
    pub constraints: Vec<f64>,
    /// Right-hand sides b of length m.
    pub rhs: Vec<f64>,
    /// Per-variable lower bounds (`-inf` for unbounded below).
    pub lower: Vec<f64>,
    /// Per-variable upper bounds (`inf` for unbounded above).
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn m(&self) -> usize {
        self.rhs.len()
    }

    /// Check dimensions, bound ordering and Hessian symmetry (to 1e-10 of the
    /// largest entry).
    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n();
        if self.hessian.len() != n * n {
            return Err(SolverError::BadInput(format!(
                "hessian has {} entries, expected {}",
                self.hessian.len(),
                n * n
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::BadInput("bound lengths disagree with n".into()));
        }
        if self.constraints.len() != self.m() * n {
            return Err(SolverError::BadInput(format!(
                "constraint matrix has {} entries, expected {}",
                self.constraints.len(),
                self.m() * n
            )));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(SolverError::Infeasible(format!(
                    "lower[{j}] = {} exceeds upper[{j}] = {}",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        let scale = self
            .hessian
            .iter()
            .fold(0.0f64, |acc, h| acc.max(h.abs()))
            .max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = (self.hessian[i * n + j] - self.hessian[j * n + i]).abs();
                if diff > 1e-10 * scale {
                    return Err(SolverError::AsymmetricHessian { i, j, diff });
                }
            }
        }
        // Cheap necessary PSD condition; interior indefiniteness surfaces
        // later as a failed pivot during factorization.
        for j in 0..n {
            let pivot = self.hessian[j * n + j];
            if pivot < -1e-8 * scale {
                return Err(SolverError::NotPositiveDefinite { col: j, pivot });
            }
        }
        Ok(())
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.constraints[i * n..(i + 1) * n]
    }
}

/// Solution of a QP: the minimizer, multipliers of the general rows, and the
/// worst Karush-Kuhn-Tucker residual (stationarity, primal feasibility,
/// complementarity, dual feasibility) at the returned point.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Incrementally maintained Cholesky factor of the free-variable Hessian block.
struct FreeFactor {
    stride: usize,
    l: Vec<f64>,
    /// Variable index at each factor position.
    order: Vec<usize>,
    /// Diagonal floor applied to keep semidefinite blocks factorable.
    floor: f64,
    scale: f64,
}

impl FreeFactor {
    fn new(h: &[f64], n: usize, free: &[usize]) -> Result<Self, SolverError> {
        let scale = (0..n).fold(0.0f64, |acc, j| acc.max(h[j * n + j].abs())).max(1e-300);
        let mut f = FreeFactor {
            stride: n,
            l: vec![0.0; n * n],
            order: Vec::with_capacity(n),
            floor: 1e-12 * scale,
            scale,
        };
        for &var in free {
            f.append(h, var)?;
        }
        Ok(f)
    }

    fn nf(&self) -> usize {
        self.order.len()
    }

    /// Append one variable at the end of the factor.
    fn append(&mut self, h: &[f64], var: usize) -> Result<(), SolverError> {
        let nf = self.nf();
        let n = self.stride;
        // Solve L y = H[order, var].
        let mut y = vec![0.0; nf];
        for i in 0..nf {
            let mut acc = h[self.order[i] * n + var];
            for k in 0..i {
                acc -= self.l[i * n + k] * y[k];
            }
            y[i] = acc / self.l[i * n + i];
        }
        let mut pivot = h[var * n + var] - y.iter().map(|v| v * v).sum::<f64>();
        if pivot < -1e-8 * self.scale {
            return Err(SolverError::NotPositiveDefinite { col: var, pivot });
        }
        if pivot < self.floor {
            pivot = self.floor;
        }
        for (k, yk) in y.iter().enumerate() {
            self.l[nf * n + k] = *yk;
        }
        self.l[nf * n + nf] = pivot.sqrt();
        self.order.push(var);
        Ok(())
    }

    /// Remove the variable at factor position `pos`, re-triangularizing the
    /// trailing block with a rank-one update.
    fn remove(&mut self, pos: usize) {
        let nf = self.nf();
        let n = self.stride;
        let tail = nf - pos - 1;
        let col: Vec<f64> = (0..tail).map(|i| self.l[(pos + 1 + i) * n + pos]).collect();
        // Shift rows below `pos` up, dropping column `pos`.
        for i in pos..nf - 1 {
            let src = i + 1;
            for j in 0..pos {
                self.l[i * n + j] = self.l[src * n + j];
            }
            for j in pos..=i {
                self.l[i * n + j] = self.l[src * n + j + 1];
            }
        }
        // Trailing block gains col col^T; fold it in with Givens-style updates.
        let mut v = col;
        for k in 0..tail {
            let dk = self.l[(pos + k) * n + (pos + k)];
            let r = dk.hypot(v[k]);
            let c = r / dk;
            let s = v[k] / dk;
            self.l[(pos + k) * n + (pos + k)] = r;
            for i in (k + 1)..tail {
                let lik = self.l[(pos + i) * n + (pos + k)];
                let updated = (lik + s * v[i]) / c;
                self.l[(pos + i) * n + (pos + k)] = updated;
                v[i] = c * v[i] - s * updated;
            }
        }
        self.order.remove(pos);
    }

    /// Solve `H_ff z = rhs` through the factor (rhs in factor order).
    fn solve(&self, rhs: &mut [f64]) {
        let n = self.stride;
        let nf = self.nf();
        for i in 0..nf {
            let mut acc = rhs[i];
            for k in 0..i {
                acc -= self.l[i * n + k] * rhs[k];
            }
            rhs[i] = acc / self.l[i * n + i];
        }
        for i in (0..nf).rev() {
            let mut acc = rhs[i];
            for k in (i + 1)..nf {
                acc -= self.l[k * n + i] * rhs[k];
            }
            rhs[i] = acc / self.l[i * n + i];
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum FixedAt {
    Lower,
    Upper,
}

struct Workspace<'a> {
    q: &'a QpProblem,
    x: Vec<f64>,
    fixed: Vec<Option<FixedAt>>,
    factor: FreeFactor,
    active_rows: Vec<usize>,
    row_active: Vec<bool>,
}

impl<'a> Workspace<'a> {
    fn gradient(&self) -> Vec<f64> {
        let n = self.q.n();
        let mut g = self.q.linear.clone();
        for i in 0..n {
            let row = &self.q.hessian[i * n..(i + 1) * n];
            g[i] += row.iter().zip(&self.x).map(|(h, x)| h * x).sum::<f64>();
        }
        g
    }

    /// Solve the equality-constrained subproblem on the current working set.
    /// Returns the step direction (full length), the general-row multipliers,
    /// and the magnitude of the unconstrained Newton step (the natural scale
    /// against which a direction counts as zero: the constrained direction is
    /// a difference of terms of this size, so anything far below it is
    /// cancellation noise).
    fn eqp_step(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.q.n();
        let nf = self.factor.nf();
        let order = &self.factor.order;

        let mut base = vec![0.0; nf];
        for (i, &var) in order.iter().enumerate() {
            base[i] = -g[var];
        }
        self.factor.solve(&mut base);
        let base_scale = base.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        let ma = self.active_rows.len();
        let mut lambda = vec![0.0; ma];
        if ma > 0 {
            // w_i = H_ff^{-1} a_{i,f}; Schur system S lambda = A_f base.
            let mut w = vec![vec![0.0; nf]; ma];
            let mut live = vec![false; ma];
            for (idx, &row_i) in self.active_rows.iter().enumerate() {
                let a = self.q.row(row_i);
                let norm_f: f64 = order.iter().map(|&v| a[v] * a[v]).sum::<f64>().sqrt();
                let norm_full: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                if norm_f > 1e-12 * norm_full {
                    live[idx] = true;
                    for (i, &var) in order.iter().enumerate() {
                        w[idx][i] = a[var];
                    }
                    self.factor.solve(&mut w[idx]);
                }
            }
            let live_idx: Vec<usize> = (0..ma).filter(|&i| live[i]).collect();
            let k = live_idx.len();
            if k > 0 {
                let mut s = vec![0.0; k * k];
                let mut v = vec![0.0; k];
                for (r, &ir) in live_idx.iter().enumerate() {
                    let a_r = self.q.row(self.active_rows[ir]);
                    for (cidx, &ic) in live_idx.iter().enumerate() {
                        s[r * k + cidx] = order
                            .iter()
                            .enumerate()
                            .map(|(i, &var)| a_r[var] * w[ic][i])
                            .sum();
                    }
                    v[r] = order
                        .iter()
                        .enumerate()
                        .map(|(i, &var)| a_r[var] * base[i])
                        .sum();
                }
                if let Some(sol) = solve_small_spd(&mut s, &mut v, k) {
                    for (r, &ir) in live_idx.iter().enumerate() {
                        lambda[ir] = sol[r];
                    }
                }
            }
            // d_f = base - sum_i lambda_i w_i.
            for (idx, wi) in w.iter().enumerate() {
                if live[idx] && lambda[idx] != 0.0 {
                    for i in 0..nf {
                        base[i] -= lambda[idx] * wi[i];
                    }
                }
            }
        }

        let mut d = vec![0.0; n];
        for (i, &var) in order.iter().enumerate() {
            d[var] = base[i];
        }
        (d, lambda, base_scale)
    }
}

/// Cholesky solve of a small SPD system, in place. Returns None if singular.
fn solve_small_spd(s: &mut [f64], v: &mut [f64], k: usize) -> Option<Vec<f64>> {
    let scale = (0..k).fold(0.0f64, |acc, i| acc.max(s[i * k + i].abs())).max(1e-300);
    for j in 0..k {
        for i in 0..j {
            let mut acc = s[j * k + i];
            for t in 0..i {
                acc -= s[j * k + t] * s[i * k + t];
            }
            s[j * k + i] = acc / s[i * k + i];
        }
        let mut pivot = s[j * k + j];
        for t in 0..j {
            pivot -= s[j * k + t] * s[j * k + t];
        }
        if pivot <= 1e-14 * scale {
            return None;
        }
        s[j * k + j] = pivot.sqrt();
    }
    for i in 0..k {
        let mut acc = v[i];
        for t in 0..i {
            acc -= s[i * k + t] * v[t];
        }
        v[i] = acc / s[i * k + i];
    }
    for i in (0..k).rev() {
        let mut acc = v[i];
        for t in (i + 1)..k {
            acc -= s[t * k + i] * v[t];
        }
        v[i] = acc / s[i * k + i];
    }
    Some(v.to_vec())
}

/// Solve a QP from a cold start.
///
/// A feasible start is searched among the origin clamped into the bounds and
/// the clamped lower/upper corners; if none satisfies the general rows the
/// problem is reported infeasible (callers with nontrivial feasible sets
/// should use [`solve_qp_from`] with a known feasible point).
pub fn solve_qp(q: &QpProblem, tol: f64) -> Result<QpSolution, SolverError> {
    q.validate()?;
    let n = q.n();
    let clamp = |v: f64, j: usize| v.max(q.lower[j]).min(q.upper[j]);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    candidates.push((0..n).map(|j| clamp(0.0, j)).collect());
    candidates.push(
        (0..n)
            .map(|j| {
                if q.lower[j].is_finite() {
                    q.lower[j]
                } else {
                    clamp(0.0, j)
                }
            })
            .collect(),
    );
    candidates.push(
        (0..n)
            .map(|j| {
                if q.upper[j].is_finite() {
                    q.upper[j]
                } else {
                    clamp(0.0, j)
                }
            })
            .collect(),
    );
    for x0 in candidates {
        if general_rows_feasible(q, &x0) {
            return solve_qp_from(q, tol, &x0);
        }
    }
    Err(SolverError::Infeasible(
        "no trivially feasible start; pass one via solve_qp_from".into(),
    ))
}

fn general_rows_feasible(q: &QpProblem, x: &[f64]) -> bool {
    (0..q.m()).all(|i| {
        let a = q.row(i);
        let ax: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
        let scale = a.iter().map(|v| v.abs()).sum::<f64>().max(1.0) * x
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1.0);
        ax <= q.rhs[i] + 1e-9 * scale
    })
}

/// Solve a QP warm-started from a feasible point `x0`.
///
/// Bounds are snapped exactly; the initial working set is read off the active
/// constraints at the start.
pub fn solve_qp_from(q: &QpProblem, tol: f64, x0: &[f64]) -> Result<QpSolution, SolverError> {
    q.validate()?;
    let n = q.n();
    let m = q.m();
    if x0.len() != n {
        return Err(SolverError::BadInput(format!(
            "start has {} entries, expected {n}",
            x0.len()
        )));
    }
    let mut x: Vec<f64> = (0..n).map(|j| x0[j].max(q.lower[j]).min(q.upper[j])).collect();
    if !general_rows_feasible(q, &x) {
        return Err(SolverError::Infeasible(
            "warm start violates a general constraint".into(),
        ));
    }

    let x_scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut fixed: Vec<Option<FixedAt>> = (0..n)
        .map(|j| {
            if q.lower[j] == q.upper[j] || (x[j] - q.lower[j]).abs() <= 1e-14 * x_scale {
                x[j] = q.lower[j];
                Some(FixedAt::Lower)
            } else if (x[j] - q.upper[j]).abs() <= 1e-14 * x_scale {
                x[j] = q.upper[j];
                Some(FixedAt::Upper)
            } else {
                None
            }
        })
        .collect();
    // Bound-infinite variables can never be "fixed" spuriously.
    for j in 0..n {
        if fixed[j] == Some(FixedAt::Lower) && !q.lower[j].is_finite() {
            fixed[j] = None;
        }
    }

    let free: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let factor = FreeFactor::new(&q.hessian, n, &free)?;

    let mut row_active = vec![false; m];
    let mut active_rows = Vec::new();
    for i in 0..m {
        let a = q.row(i);
        let ax: f64 = a.iter().zip(&x).map(|(a, x)| a * x).sum();
        let scale = a.iter().map(|v| v.abs()).sum::<f64>().max(1.0) * x_scale;
        if (ax - q.rhs[i]).abs() <= 1e-12 * scale {
            row_active[i] = true;
            active_rows.push(i);
        }
    }

    let mut ws = Workspace {
        q,
        x,
        fixed,
        factor,
        active_rows,
        row_active,
    };

    let max_iters = 60 * (n + m) + 100;
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > max_iters {
            return Err(SolverError::IterationLimit(format!(
                "active-set QP after {max_iters} iterations"
            )));
        }

        // Working-set rows can drift off their face when blocking bounds snap
        // x components exactly; a row whose slack reopened is not active.
        let x_scale = ws.x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let mut idx = 0;
        while idx < ws.active_rows.len() {
            let row_i = ws.active_rows[idx];
            let a = ws.q.row(row_i);
            let ax: f64 = a.iter().zip(&ws.x).map(|(a, x)| a * x).sum();
            let scale = a.iter().map(|v| v.abs()).sum::<f64>().max(1.0) * x_scale;
            if (ax - ws.q.rhs[row_i]).abs() > 1e-9 * scale {
                ws.active_rows.remove(idx);
                ws.row_active[row_i] = false;
            } else {
                idx += 1;
            }
        }

        let g = ws.gradient();
        let g_scale = g.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let (d, lambda, newton_scale) = ws.eqp_step(&g);
        let step_norm = d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        if step_norm <= 1e-12 * x_scale.max(newton_scale).max(1.0) {
            // At the working-set optimum; check multipliers.
            let mut grad_full = g.clone();
            for (idx, &row_i) in ws.active_rows.iter().enumerate() {
                let a = ws.q.row(row_i);
                for j in 0..n {
                    grad_full[j] += lambda[idx] * a[j];
                }
            }
            let mult_tol = tol.max(1e-13) * g_scale;
            // Most negative multiplier, scanning general rows then bounds.
            let mut worst = -mult_tol;
            let mut drop_row: Option<usize> = None;
            let mut drop_bound: Option<usize> = None;
            for (idx, &lam) in lambda.iter().enumerate() {
                if lam < worst {
                    worst = lam;
                    drop_row = Some(idx);
                    drop_bound = None;
                }
            }
            for j in 0..n {
                if ws.q.lower[j] == ws.q.upper[j] {
                    continue;
                }
                let mult = match ws.fixed[j] {
                    Some(FixedAt::Lower) => grad_full[j],
                    Some(FixedAt::Upper) => -grad_full[j],
                    None => continue,
                };
                if mult < worst {
                    worst = mult;
                    drop_bound = Some(j);
                    drop_row = None;
                }
            }
            if let Some(idx) = drop_row {
                let row_i = ws.active_rows.remove(idx);
                ws.row_active[row_i] = false;
                continue;
            }
            if let Some(j) = drop_bound {
                ws.fixed[j] = None;
                ws.factor.append(&ws.q.hessian, j)?;
                continue;
            }

            // Optimal. Assemble the report.
            let mut multipliers = vec![0.0; m];
            for (idx, &row_i) in ws.active_rows.iter().enumerate() {
                multipliers[row_i] = lambda[idx].max(0.0);
            }
            let objective = {
                let mut quad = 0.0;
                for i in 0..n {
                    let row = &ws.q.hessian[i * n..(i + 1) * n];
                    quad += ws.x[i] * row.iter().zip(&ws.x).map(|(h, x)| h * x).sum::<f64>();
                }
                0.5 * quad + ws.q.linear.iter().zip(&ws.x).map(|(c, x)| c * x).sum::<f64>()
            };
            let kkt = kkt_residual(ws.q, &ws.x, &multipliers);
            return Ok(QpSolution {
                x: ws.x,
                objective,
                multipliers,
                kkt_residual: kkt,
                iterations,
            });
        }

        // Ratio test against inactive constraints.
        let mut alpha = 1.0f64;
        enum Blocking {
            LowerBound(usize),
            UpperBound(usize),
            Row(usize),
        }
        let mut blocking: Option<Blocking> = None;
        for j in 0..n {
            if ws.fixed[j].is_some() || d[j] == 0.0 {
                continue;
            }
            if d[j] < 0.0 && ws.q.lower[j].is_finite() {
                let a = (ws.q.lower[j] - ws.x[j]) / d[j];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some(Blocking::LowerBound(j));
                }
            } else if d[j] > 0.0 && ws.q.upper[j].is_finite() {
                let a = (ws.q.upper[j] - ws.x[j]) / d[j];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some(Blocking::UpperBound(j));
                }
            }
        }
        for i in 0..m {
            if ws.row_active[i] {
                continue;
            }
            let a_row = ws.q.row(i);
            let ad: f64 = a_row.iter().zip(&d).map(|(a, d)| a * d).sum();
            let row_scale = a_row.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
            if ad > 1e-14 * row_scale * step_norm {
                let ax: f64 = a_row.iter().zip(&ws.x).map(|(a, x)| a * x).sum();
                let a = (ws.q.rhs[i] - ax) / ad;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some(Blocking::Row(i));
                }
            }
        }

        for j in 0..n {
            ws.x[j] += alpha * d[j];
        }
        match blocking {
            None => {}
            Some(Blocking::LowerBound(j)) => {
                ws.x[j] = ws.q.lower[j];
                let pos = ws.factor.order.iter().position(|&v| v == j).expect("free");
                ws.factor.remove(pos);
                ws.fixed[j] = Some(FixedAt::Lower);
            }
            Some(Blocking::UpperBound(j)) => {
                ws.x[j] = ws.q.upper[j];
                let pos = ws.factor.order.iter().position(|&v| v == j).expect("free");
                ws.factor.remove(pos);
                ws.fixed[j] = Some(FixedAt::Upper);
            }
            Some(Blocking::Row(i)) => {
                ws.row_active[i] = true;
                ws.active_rows.push(i);
            }
        }
    }
}

/// Worst KKT residual of a candidate solution: stationarity, primal
/// feasibility, dual feasibility, and complementary slackness.
fn kkt_residual(q: &QpProblem, x: &[f64], multipliers: &[f64]) -> f64 {
    let n = q.n();
    let mut grad = q.linear.clone();
    for i in 0..n {
        let row = &q.hessian[i * n..(i + 1) * n];
        grad[i] += row.iter().zip(x).map(|(h, x)| h * x).sum::<f64>();
    }
    for (i, &lam) in multipliers.iter().enumerate() {
        if lam != 0.0 {
            let a = q.row(i);
            for j in 0..n {
                grad[j] += lam * a[j];
            }
        }
    }
    let mut worst = 0.0f64;
    let tol_snap = 1e-11;
    for j in 0..n {
        let at_lower = q.lower[j].is_finite() && (x[j] - q.lower[j]).abs() <= tol_snap * x[j].abs().max(1.0);
        let at_upper = q.upper[j].is_finite() && (x[j] - q.upper[j]).abs() <= tol_snap * x[j].abs().max(1.0);
        let stat = if at_lower && at_upper {
            0.0
        } else if at_lower {
            (-grad[j]).max(0.0)
        } else if at_upper {
            grad[j].max(0.0)
        } else {
            grad[j].abs()
        };
        worst = worst.max(stat);
        worst = worst.max(q.lower[j] - x[j]).max(x[j] - q.upper[j]);
    }
    for i in 0..q.m() {
        let a = q.row(i);
        let slack = q.rhs[i] - a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
        worst = worst.max(-slack);
        worst = worst.max((multipliers[i] * slack).abs());
        worst = worst.max(-multipliers[i]);
    }
    worst
}
