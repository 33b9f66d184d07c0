//! Dense two-phase tableau simplex for `min cᵀx  s.t.  A x = b,  x ≥ 0`.
//!
//! Pricing is Dantzig's rule, switching to Bland's rule while degenerate
//! pivots stall. The tableau is rebuilt from the original data whenever the
//! basic solution drifts from `A x = b`.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum StandardOutcome {
    Optimal {
        x: Vector,
        /// Row duals `y` with `c − Aᵀy ≥ 0`.
        y: Vector,
        objective: f64,
        iterations: usize,
    },
    Infeasible {
        iterations: usize,
    },
    /// `x` is the last vertex, `ray` satisfies `A·ray = 0`, `ray ≥ 0`, `cᵀray < 0`.
    Unbounded {
        x: Vector,
        ray: Vector,
        iterations: usize,
    },
    MaxIter {
        iterations: usize,
    },
}

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// Sign-adjusted `[A | I]` and `b`, kept for reinversion.
    orig: Matrix,
    b: Vector,
    drift_tol: f64,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [f64]) {
        let w = self.width;
        let inv = 1.0 / self.data[pr * w + pc];
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let (before, rest) = self.data.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let factor = row[pc];
            if factor != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= factor * p;
                }
                row[pc] = 0.0;
            }
        }
        let factor = obj[pc];
        if factor != 0.0 {
            for (x, p) in obj.iter_mut().zip(prow.iter()) {
                *x -= factor * p;
            }
            obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    /// `‖[A | I] x − b‖∞` for the current basic solution, from the original data.
    fn drift(&self) -> f64 {
        let mut res = -self.b.clone();
        for r in 0..self.rows {
            let v = self.rhs(r);
            if v != 0.0 {
                res.axpy(v, &self.orig.column(self.basis[r]), 1.0);
            }
        }
        res.amax()
    }

    /// Rebuilds the tableau as `B⁻¹ [A | I | b]` and the reduced costs for
    /// `cost`. Returns false when the basis matrix is numerically singular.
    fn refactor(&mut self, obj: &mut [f64], cost: &[f64]) -> bool {
        let (m, w) = (self.rows, self.width);
        let basis_matrix = self.orig.select_columns(&self.basis);
        let lu = basis_matrix.lu();
        let mut full = Matrix::zeros(m, w);
        full.view_mut((0, 0), (m, w - 1)).copy_from(&self.orig);
        full.set_column(w - 1, &self.b);
        let Some(inv) = lu.solve(&full) else {
            return false;
        };
        if inv.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for r in 0..m {
            for c in 0..w {
                self.data[r * w + c] = inv[(r, c)];
            }
            self.data[r * w + self.basis[r]] = 1.0;
        }
        obj.copy_from_slice(cost);
        for r in 0..m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..w {
                    obj[c] -= cb * inv[(r, c)];
                }
            }
            obj[self.basis[r]] = 0.0;
        }
        true
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded(usize),
    MaxIter,
}

const PIVOT_TOL: f64 = 1e-9;
/// Entries at or below this (relative to the column) count as nonpositive
/// when certifying an unbounded ray.
const NOISE_TOL: f64 = 1e-11;
/// Consecutive degenerate pivots before pricing switches to Bland's rule.
const STALL_LIMIT: usize = 50;
const DEGENERATE_TOL: f64 = 1e-12;
/// Pivots between drift checks.
const CHECK_EVERY: usize = 25;

enum Ratio {
    Pivot(usize),
    /// No entry above the noise level: the column is an unbounded ray.
    Ray,
    /// Only entries between the noise level and the pivot threshold.
    Unsafe,
}

/// Bland's ratio test (smallest ratio, ties to the lowest basic index)
/// restricted to pivots above a threshold relative to the column.
fn ratio_test(t: &Tableau, enter: usize, scale: f64) -> Ratio {
    let piv_tol = PIVOT_TOL * scale;
    let mut any_positive = false;
    let mut leave: Option<(usize, f64)> = None;
    for r in 0..t.rows {
        let a = t.at(r, enter);
        any_positive |= a > NOISE_TOL * scale;
        if a > piv_tol {
            let ratio = t.rhs(r).max(0.0) / a;
            match leave {
                None => leave = Some((r, ratio)),
                Some((lr, best)) => {
                    let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                    if (ratio < best && !tie) || (tie && t.basis[r] < t.basis[lr]) {
                        leave = Some((r, ratio));
                    }
                }
            }
        }
    }
    match leave {
        Some((r, _)) => Ratio::Pivot(r),
        None if any_positive => Ratio::Unsafe,
        None => Ratio::Ray,
    }
}

/// Dual simplex pivots that clear negative basic values left by a
/// refactorization, keeping the reduced costs of columns `0..n_enter` as
/// nonnegative as possible. Returns false if a negative row cannot be fixed.
fn repair(t: &mut Tableau, obj: &mut [f64], n_enter: usize, iterations: &mut usize) -> bool {
    let tol = t.drift_tol;
    for _ in 0..2 * t.rows + 10 {
        let Some(r) = (0..t.rows)
            .filter(|&r| t.rhs(r) < -tol)
            .min_by(|&a, &b| t.rhs(a).total_cmp(&t.rhs(b)))
        else {
            return true;
        };
        let row_scale = (0..n_enter).fold(0.0f64, |acc, j| acc.max(t.at(r, j).abs())).max(1.0);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n_enter {
            let a = t.at(r, j);
            if a < -PIVOT_TOL * row_scale {
                let ratio = obj[j].max(0.0) / -a;
                if best.is_none_or(|(_, b)| ratio < b) {
                    best = Some((j, ratio));
                }
            }
        }
        let Some((j, _)) = best else {
            return false;
        };
        t.pivot(r, j, obj);
        *iterations += 1;
    }
    false
}

fn column_scale(t: &Tableau, j: usize) -> f64 {
    (0..t.rows).fold(0.0f64, |acc, r| acc.max(t.at(r, j).abs())).max(1.0)
}

/// Runs pivoting over columns `0..n_enter`.
fn run_phase(
    t: &mut Tableau,
    obj: &mut [f64],
    cost: &[f64],
    n_enter: usize,
    rc_tol: f64,
    iterations: &mut usize,
    max_iter: usize,
) -> PhaseEnd {
    let mut since_check = 0;
    let mut stall = 0;
    let mut refreshed = false;
    // an ill-conditioned basis cannot get below its own solve error, so the
    // trigger follows the drift measured right after the last refactorization
    let mut trigger = t.drift_tol;
    loop {
        if since_check >= CHECK_EVERY {
            since_check = 0;
            if t.drift() > trigger && t.refactor(obj, cost) {
                repair(t, obj, n_enter, iterations);
                trigger = t.drift_tol.max(10.0 * t.drift());
            }
        }
        // Dantzig pricing on column-scaled reduced costs; Bland's rule while
        // degenerate pivots stall, which rules out cycling.
        let mut candidates: Vec<(usize, f64, f64)> = (0..n_enter)
            .filter(|&j| obj[j] < -rc_tol)
            .filter_map(|j| {
                // reduced costs carry round-off proportional to the column size
                let scale = column_scale(t, j);
                (obj[j] < -rc_tol * scale).then(|| (j, obj[j] / scale, scale))
            })
            .collect();
        if stall < STALL_LIMIT {
            candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
        }
        let mut choice = None;
        for &(j, _, scale) in &candidates {
            match ratio_test(t, j, scale) {
                Ratio::Pivot(r) => {
                    choice = Some((r, j));
                    break;
                }
                Ratio::Ray => return PhaseEnd::Unbounded(j),
                Ratio::Unsafe => {}
            }
        }
        let Some((pr, enter)) = choice else {
            // confirm optimality on a fresh factorization
            if !refreshed && t.drift() > t.drift_tol && t.refactor(obj, cost) {
                repair(t, obj, n_enter, iterations);
                trigger = t.drift_tol.max(10.0 * t.drift());
                refreshed = true;
                continue;
            }
            return PhaseEnd::Optimal;
        };
        if *iterations >= max_iter {
            return PhaseEnd::MaxIter;
        }
        if t.rhs(pr) <= DEGENERATE_TOL {
            stall += 1;
        } else {
            stall = 0;
        }
        t.pivot(pr, enter, obj);
        *iterations += 1;
        since_check += 1;
        refreshed = false;
    }
}

pub(crate) fn solve_standard(a: &Matrix, b: &Vector, c: &Vector, max_iter: usize) -> StandardOutcome {
    let (m, n) = a.shape();
    let width = n + m + 1;
    let mut sign = vec![1.0; m];
    let mut data = vec![0.0; m * width];
    for r in 0..m {
        if b[r] < 0.0 {
            sign[r] = -1.0;
        }
        for j in 0..n {
            data[r * width + j] = sign[r] * a[(r, j)];
        }
        data[r * width + n + r] = 1.0;
        data[r * width + width - 1] = sign[r] * b[r];
    }

    // Use an existing unit column (a slack) as the initial basic variable when
    // available; remaining rows start on their artificial.
    let mut basis: Vec<usize> = (0..m).map(|r| n + r).collect();
    let mut used = vec![false; n];
    for j in 0..n {
        let mut hit = None;
        let mut unit = true;
        for r in 0..m {
            let v = data[r * width + j];
            if v == 0.0 {
                continue;
            }
            if v == 1.0 && hit.is_none() {
                hit = Some(r);
            } else {
                unit = false;
                break;
            }
        }
        if let (true, Some(r)) = (unit, hit) {
            if basis[r] >= n && !used[j] {
                basis[r] = j;
                used[j] = true;
            }
        }
    }
    let bnorm = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut orig = Matrix::zeros(m, width - 1);
    let mut b_signed = Vector::zeros(m);
    for r in 0..m {
        for c in 0..width - 1 {
            orig[(r, c)] = data[r * width + c];
        }
        b_signed[r] = data[r * width + width - 1];
    }
    let mut t = Tableau {
        rows: m,
        width,
        data,
        basis,
        orig,
        b: b_signed,
        drift_tol: 1e-9 * (1.0 + bnorm),
    };
    let cnorm = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut iterations = 0;

    // Phase 1: minimize the sum of basic artificials.
    let needs_phase1 = t.basis.iter().any(|&j| j >= n);
    if needs_phase1 {
        let mut cost = vec![0.0; width];
        for r in 0..m {
            if t.basis[r] >= n {
                cost[n + r] = 1.0;
            }
        }
        let mut obj = cost.clone();
        for r in 0..m {
            if t.basis[r] >= n {
                for k in 0..width {
                    obj[k] -= t.at(r, k);
                }
            }
        }
        match run_phase(&mut t, &mut obj, &cost, n, 1e-11, &mut iterations, max_iter) {
            PhaseEnd::MaxIter => return StandardOutcome::MaxIter { iterations },
            PhaseEnd::Unbounded(_) | PhaseEnd::Optimal => {}
        }
        let infeas: f64 = (0..m)
            .filter(|&r| t.basis[r] >= n)
            .map(|r| t.rhs(r))
            .sum();
        if infeas > 1e-9 * (1.0 + bnorm) {
            return StandardOutcome::Infeasible { iterations };
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if t.basis[r] < n {
                continue;
            }
            if let Some(j) = (0..n).find(|&j| t.at(r, j).abs() > 1e-9) {
                let mut dummy = vec![0.0; width];
                t.pivot(r, j, &mut dummy);
            }
        }
    }

    // Phase 2
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c.as_slice());
    let mut obj = cost.clone();
    for r in 0..m {
        let cb = if t.basis[r] < n { c[t.basis[r]] } else { 0.0 };
        if cb != 0.0 {
            for k in 0..width {
                obj[k] -= cb * t.at(r, k);
            }
        }
    }
    let rc_tol = 1e-10 * (1.0 + cnorm);
    let end = run_phase(&mut t, &mut obj, &cost, n, rc_tol, &mut iterations, max_iter);

    let mut x = Vector::zeros(n);
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    match end {
        PhaseEnd::MaxIter => StandardOutcome::MaxIter { iterations },
        PhaseEnd::Unbounded(enter) => {
            let mut ray = Vector::zeros(n);
            ray[enter] = 1.0;
            for r in 0..m {
                if t.basis[r] < n {
                    ray[t.basis[r]] = -t.at(r, enter);
                }
            }
            StandardOutcome::Unbounded {
                x,
                ray,
                iterations,
            }
        }
        PhaseEnd::Optimal => {
            // y' = c_Bᵀ B⁻¹ on the sign-adjusted rows; B⁻¹ sits in the artificial block.
            let mut y = Vector::zeros(m);
            for i in 0..m {
                let mut acc = 0.0;
                for r in 0..m {
                    if t.basis[r] < n {
                        acc += c[t.basis[r]] * t.at(r, n + i);
                    }
                }
                y[i] = sign[i] * acc;
            }
            let objective = c.dot(&x);
            StandardOutcome::Optimal {
                x,
                y,
                objective,
                iterations,
            }
        }
    }
}
