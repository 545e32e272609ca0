//! Stacked sidelobe steering columns shared by the Gaussian designers.
//!
//! Each sidelobe triple (n, v, eps) with (n, v) != (0, 0) contributes one
//! complex column. The full designer uses columns over the K*M grid; the
//! decoupled designer uses per-subcarrier columns pre-scaled by the symbol
//! profile's Doppler response. Both exploit that the real and imaginary
//! symbol components share the same steering entries, so all heavy products
//! run in the reduced dimension and are tiled up afterwards.

use crate::grid::FractionalDoppler;
use std::f64::consts::TAU;

pub(crate) struct SidelobeBasis {
    pub dim: usize,
    pub cols: usize,
    /// Column-major real parts, `dim * cols`.
    re: Vec<f64>,
    /// Column-major imaginary parts.
    im: Vec<f64>,
    /// Per-column coefficient of the identity part of the curvature matrix
    /// (2 for the full grid, 2 ||p||^2 for the decoupled variant).
    pub ident_coeff: f64,
    scratch: Vec<f64>,
}

impl SidelobeBasis {
    /// Columns over the K*M grid: entry (m, k) of column (v, n, eps) is
    /// `e^{-j 2 pi (v - eps) m / M} e^{j 2 pi n k / K}`, ordered v-major,
    /// n-middle, eps-minor, skipping (n, v) = (0, 0).
    pub fn full_grid(
        subcarriers: usize,
        cp_len: usize,
        symbols: usize,
        eps_set: &[FractionalDoppler],
    ) -> Self {
        let dim = subcarriers * symbols;
        let cols = (cp_len * symbols - 1) * eps_set.len();
        let mut re = Vec::with_capacity(dim * cols);
        let mut im = Vec::with_capacity(dim * cols);
        let half = symbols as i32 / 2;
        for v in -half..half {
            for n in 0..cp_len {
                if v == 0 && n == 0 {
                    continue;
                }
                for eps in eps_set {
                    let step_m = -TAU * (v as f64 - eps.value()) / symbols as f64;
                    let step_k = TAU * n as f64 / subcarriers as f64;
                    for m in 0..symbols {
                        let pm = step_m * m as f64;
                        for k in 0..subcarriers {
                            let phase = pm + step_k * k as f64;
                            re.push(phase.cos());
                            im.push(phase.sin());
                        }
                    }
                }
            }
        }
        Self {
            dim,
            cols,
            re,
            im,
            ident_coeff: 2.0,
            scratch: Vec::new(),
        }
    }

    /// Per-subcarrier columns for a fixed symbol-power profile `p`:
    /// column (v, n, eps) is `sqrt(gamma_{v,eps}) e^{j 2 pi n k / K}` with
    /// `gamma_{v,eps} = |p^T f^D_{v,eps}|^2`. Same ordering and skip rule.
    pub fn decoupled(
        subcarriers: usize,
        cp_len: usize,
        symbol_power: &[f64],
        eps_set: &[FractionalDoppler],
    ) -> Self {
        let symbols = symbol_power.len();
        let dim = subcarriers;
        let cols = (cp_len * symbols - 1) * eps_set.len();
        let mut re = Vec::with_capacity(dim * cols);
        let mut im = Vec::with_capacity(dim * cols);
        let p_norm_sq: f64 = symbol_power.iter().map(|p| p * p).sum();
        let half = symbols as i32 / 2;
        for v in -half..half {
            for n in 0..cp_len {
                if v == 0 && n == 0 {
                    continue;
                }
                for eps in eps_set {
                    let step_m = -TAU * (v as f64 - eps.value()) / symbols as f64;
                    let (mut dr, mut di) = (0.0, 0.0);
                    for (m, pm) in symbol_power.iter().enumerate() {
                        let phase = step_m * m as f64;
                        dr += pm * phase.cos();
                        di += pm * phase.sin();
                    }
                    let gamma_sqrt = (dr * dr + di * di).sqrt();
                    let step_k = TAU * n as f64 / subcarriers as f64;
                    for k in 0..subcarriers {
                        let phase = step_k * k as f64;
                        re.push(gamma_sqrt * phase.cos());
                        im.push(gamma_sqrt * phase.sin());
                    }
                }
            }
        }
        Self {
            dim,
            cols,
            re,
            im,
            ident_coeff: 2.0 * p_norm_sq,
            scratch: Vec::new(),
        }
    }

    /// Per-column projections `(re_j . x, im_j . x)`.
    pub fn project(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.dim);
        let mut a = Vec::with_capacity(self.cols);
        let mut b = Vec::with_capacity(self.cols);
        for j in 0..self.cols {
            let (re, im) = (
                &self.re[j * self.dim..(j + 1) * self.dim],
                &self.im[j * self.dim..(j + 1) * self.dim],
            );
            a.push(re.iter().zip(x).map(|(r, x)| r * x).sum());
            b.push(im.iter().zip(x).map(|(i, x)| i * x).sum());
        }
        (a, b)
    }

    /// Weighted Gram matrix `S = sum_j w_j (re_j re_j^T + im_j im_j^T)` into
    /// a row-major `dim x dim` buffer.
    pub fn weighted_gram(&mut self, weights: &[f64], s: &mut [f64]) {
        debug_assert_eq!(weights.len(), self.cols);
        debug_assert_eq!(s.len(), self.dim * self.dim);
        s.fill(0.0);
        self.scratch.resize(self.dim * self.cols, 0.0);
        for part in 0..2 {
            let src = if part == 0 { &self.re } else { &self.im };
            for (j, &w) in weights.iter().enumerate() {
                let root = w.sqrt();
                let col = &src[j * self.dim..(j + 1) * self.dim];
                let dst = &mut self.scratch[j * self.dim..(j + 1) * self.dim];
                for (d, c) in dst.iter_mut().zip(col) {
                    *d = root * c;
                }
            }
            // s += scaled * scaled^T (scaled is dim x cols, column-major).
            unsafe {
                matrixmultiply::dgemm(
                    self.dim,
                    self.cols,
                    self.dim,
                    1.0,
                    self.scratch.as_ptr(),
                    1,
                    self.dim as isize,
                    self.scratch.as_ptr(),
                    self.dim as isize,
                    1,
                    1.0,
                    s.as_mut_ptr(),
                    self.dim as isize,
                    1,
                );
            }
        }
    }
}

/// Peak steering column over the K*M grid for one epsilon sample:
/// entry (m, k) is `e^{j 2 pi eps m / M}` (independent of k).
pub(crate) fn peak_column(
    subcarriers: usize,
    symbols: usize,
    eps: FractionalDoppler,
) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::with_capacity(subcarriers * symbols);
    let mut im = Vec::with_capacity(subcarriers * symbols);
    for m in 0..symbols {
        let phase = TAU * eps.value() * m as f64 / symbols as f64;
        let (c, s) = (phase.cos(), phase.sin());
        for _ in 0..subcarriers {
            re.push(c);
            im.push(s);
        }
    }
    (re, im)
}
