//! Goldfarb–Idnani dual active-set method for strictly convex QPs
//!
//! ```text
//!     minimize    ½ wᵀ G w + aᵀ w
//!     subject to  C w ≤ d
//! ```
//!
//! `G = L Lᵀ` is given by its Cholesky factor. The method keeps `J = L⁻ᵀ Q`
//! and an upper-triangular `R` with `Jᵀ N = [R; 0]`, where the columns of `N`
//! are the inward normals `−cᵢ` of the active constraints.

use alloc::vec;
use alloc::vec::Vec;

use super::{QpStatus, Tolerances};
use crate::{Matrix, Vector};

pub(crate) struct ReducedSolution {
    pub w: Vector,
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub status: QpStatus,
}

struct Factors {
    j: Matrix,
    r: Matrix,
    q: usize,
}

impl Factors {
    /// Appends a constraint whose transformed normal is `dv = Jᵀ n`.
    /// Returns `false` when the normal is linearly dependent on the active set.
    fn add(&mut self, mut dv: Vector) -> bool {
        let nr = self.j.nrows();
        let q = self.q;
        if q >= nr {
            return false;
        }
        let scale = dv.norm();
        let tail = dv.rows(q, nr - q).norm();
        if tail <= 1e-12 * scale || tail == 0.0 {
            return false;
        }
        for i in (q + 1..nr).rev() {
            let (a, b) = (dv[i - 1], dv[i]);
            if b == 0.0 {
                continue;
            }
            let h = libm::hypot(a, b);
            let (c, s) = (a / h, b / h);
            dv[i - 1] = h;
            dv[i] = 0.0;
            rotate_columns(&mut self.j, i - 1, i, c, s);
        }
        if dv[q] < 0.0 {
            dv[q] = -dv[q];
            self.j.column_mut(q).neg_mut();
        }
        for i in 0..=q {
            self.r[(i, q)] = dv[i];
        }
        self.q += 1;
        true
    }

    /// Removes the active constraint at position `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for i in 0..=col + 1 {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for i in l..q - 1 {
            let (a, b) = (self.r[(i, i)], self.r[(i + 1, i)]);
            if b != 0.0 {
                let h = libm::hypot(a, b);
                let (c, s) = (a / h, b / h);
                for col in i..q - 1 {
                    let (x, y) = (self.r[(i, col)], self.r[(i + 1, col)]);
                    self.r[(i, col)] = c * x + s * y;
                    self.r[(i + 1, col)] = -s * x + c * y;
                }
                self.r[(i + 1, i)] = 0.0;
                rotate_columns(&mut self.j, i, i + 1, c, s);
            }
            if self.r[(i, i)] < 0.0 {
                for col in i..q - 1 {
                    self.r[(i, col)] = -self.r[(i, col)];
                }
                self.j.column_mut(i).neg_mut();
            }
        }
        self.q -= 1;
    }

    /// Solves `R[..q, ..q] x = rhs`.
    fn solve_r(&self, rhs: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut x = rhs.to_vec();
        for i in (0..q).rev() {
            let mut acc = x[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * x[k];
            }
            x[i] = acc / self.r[(i, i)];
        }
        x
    }

    /// Solves `R[..q, ..q]ᵀ x = rhs`.
    fn solve_rt(&self, rhs: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut x = rhs.to_vec();
        for i in 0..q {
            let mut acc = x[i];
            for k in 0..i {
                acc -= self.r[(k, i)] * x[k];
            }
            x[i] = acc / self.r[(i, i)];
        }
        x
    }
}

fn rotate_columns(m: &mut Matrix, a: usize, b: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (x, y) = (m[(row, a)], m[(row, b)]);
        m[(row, a)] = c * x + s * y;
        m[(row, b)] = -s * x + c * y;
    }
}

fn slack(c: &Matrix, d: &Vector, w: &Vector, i: usize) -> f64 {
    let mut acc = d[i];
    for k in 0..w.len() {
        acc -= c[(i, k)] * w[k];
    }
    acc
}

/// Runs the dual active-set iteration. `warm` lists constraint indices that
/// seed the active set; dependent or sign-inconsistent entries are discarded.
pub(crate) fn solve(
    chol_l: &Matrix,
    j0: &Matrix,
    a: &Vector,
    c: &Matrix,
    d: &Vector,
    warm: &[usize],
    tol: &Tolerances,
) -> ReducedSolution {
    let nr = a.len();
    let ncons = c.nrows();
    let mut f = Factors {
        j: j0.clone(),
        r: Matrix::zeros(nr, nr),
        q: 0,
    };
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; ncons];
    let mut iterations = 0usize;

    // unconstrained minimizer −G⁻¹a
    let mut w = {
        let mut y = a.clone();
        chol_l.solve_lower_triangular_mut(&mut y);
        chol_l.tr_solve_lower_triangular_mut(&mut y);
        -y
    };

    if !warm.is_empty() && nr > 0 {
        for &p in warm {
            if p >= ncons || is_active[p] {
                continue;
            }
            let dv = -(f.j.tr_mul(&c.row(p).transpose()));
            if f.add(dv) {
                active.push(p);
                is_active[p] = true;
            }
        }
        loop {
            let q = f.q;
            let b_act: Vec<f64> = active.iter().map(|&i| -d[i]).collect();
            let y1 = f.solve_rt(&b_act);
            let j1 = f.j.columns(0, q);
            let j2 = f.j.columns(q, nr - q);
            let y1v = Vector::from_column_slice(&y1);
            w = &j1 * &y1v - &j2 * (j2.tr_mul(a));
            let rhs = &y1v + j1.tr_mul(a);
            let uu = f.solve_r(rhs.as_slice());
            let scale = uu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut worst: Option<usize> = None;
            for (k, &val) in uu.iter().enumerate() {
                if val < -1e-12 * scale && worst.is_none_or(|wk| val < uu[wk]) {
                    worst = Some(k);
                }
            }
            match worst {
                Some(l) => {
                    f.drop(l);
                    is_active[active.remove(l)] = false;
                }
                None => {
                    u = uu.into_iter().map(|v| v.max(0.0)).collect();
                    break;
                }
            }
        }
    }

    let row_norms: Vec<f64> = (0..ncons)
        .map(|i| c.row(i).norm().max(f64::MIN_POSITIVE))
        .collect();

    loop {
        // most violated constraint, lowest index on ties
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..ncons {
            if is_active[i] {
                continue;
            }
            let s = slack(c, d, &w, i);
            if s < -tol.primal * (1.0 + d[i].abs()) {
                let dist = s / row_norms[i];
                if pick.is_none_or(|(_, best)| dist < best) {
                    pick = Some((i, dist));
                }
            }
        }
        let Some((p, _)) = pick else {
            return ReducedSolution {
                w,
                active,
                multipliers: u,
                iterations,
                status: QpStatus::Optimal,
            };
        };

        let np = -c.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > tol.max_iter {
                return ReducedSolution {
                    w,
                    active,
                    multipliers: u,
                    iterations,
                    status: QpStatus::MaxIter,
                };
            }
            let q = f.q;
            let dv = f.j.tr_mul(&np);
            let d2 = dv.rows(q, nr - q);
            let d2n = d2.norm_squared();
            let zdir = f.j.columns(q, nr - q) * d2;
            let rr = f.solve_r(&dv.as_slice()[..q]);

            let rscale = rr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in rr.iter().enumerate() {
                if rk > 1e-13 * rscale.max(1e-300) {
                    let t = u[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let s_p = slack(c, d, &w, p);
            let t2 = if d2n > 1e-24 * dv.norm_squared() && d2n > 0.0 {
                -s_p / d2n
            } else {
                f64::INFINITY
            };

            if t1.is_infinite() && t2.is_infinite() {
                return ReducedSolution {
                    w,
                    active,
                    multipliers: u,
                    iterations,
                    status: QpStatus::Infeasible,
                };
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                w.axpy(t, &zdir, 1.0);
            }
            for (uk, rk) in u.iter_mut().zip(&rr) {
                *uk -= t * rk;
            }
            u_p += t;
            if t2 <= t1 {
                if f.add(dv) {
                    active.push(p);
                    is_active[p] = true;
                    u.push(u_p);
                }
                break;
            }
            let l = drop_at.expect("partial step has a blocking constraint");
            f.drop(l);
            u.remove(l);
            is_active[active.remove(l)] = false;
        }
    }
}
