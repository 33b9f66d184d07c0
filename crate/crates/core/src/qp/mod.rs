//! Dense convex QP and LP solvers.
//!
//! Problems take the form
//!
//! ```text
//!     minimize    ½ zᵀ H z + fᵀ z
//!     subject to  Aeq z = beq,   Ain z ≤ bin
//! ```
//!
//! Multipliers follow the convention `H z + f + Aeqᵀ λeq + Ainᵀ λin = 0`
//! with `λin ≥ 0`.
//!
//! QPs are solved by eliminating the equalities through an orthonormal
//! nullspace basis and running a dual active-set method on the reduced
//! problem. LPs (`H = 0`) go to a two-phase simplex.

mod active_set;
pub(crate) mod simplex;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use nalgebra::linalg::SVD;

use crate::linalg::max_abs;
use crate::{Error, Matrix, Result, Vector};

pub(crate) use simplex::{solve_standard, StandardOutcome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub primal: f64,
    pub dual: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            primal: 1e-8,
            dual: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    /// The LP pivots finished but the vertex fails the primal check, which
    /// happens on badly conditioned problems.
    Inaccurate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    pub f: Vector,
    pub aeq: Matrix,
    pub beq: Vector,
    pub ain: Matrix,
    pub bin: Vector,
}

impl QpProblem {
    /// Builds and validates a problem.
    pub fn new(h: Matrix, f: Vector, aeq: Matrix, beq: Vector, ain: Matrix, bin: Vector) -> Result<Self> {
        let p = Self {
            h,
            f,
            aeq,
            beq,
            ain,
            bin,
        };
        p.validate()?;
        Ok(p)
    }

    /// An LP: `H = 0`.
    pub fn linear(f: Vector, aeq: Matrix, beq: Vector, ain: Matrix, bin: Vector) -> Result<Self> {
        let n = f.len();
        Self::new(Matrix::zeros(n, n), f, aeq, beq, ain, bin)
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if self.h.shape() != (n, n) {
            return Err(Error::dim("H", n, self.h.nrows()));
        }
        if self.aeq.ncols() != n || self.aeq.nrows() != self.beq.len() {
            return Err(Error::dim("Aeq", self.beq.len(), self.aeq.nrows()));
        }
        if self.ain.ncols() != n || self.ain.nrows() != self.bin.len() {
            return Err(Error::dim("Ain", self.bin.len(), self.ain.nrows()));
        }
        let all = [&self.h, &self.aeq, &self.ain];
        if !all.iter().all(|m| crate::linalg::is_finite(m))
            || !self.f.iter().chain(self.beq.iter()).chain(self.bin.iter()).all(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument("problem data must be finite".into()));
        }
        let hs = max_abs_m(&self.h);
        let asym = max_abs_m(&(&self.h - self.h.transpose()));
        if asym > 1e-12 * hs.max(1.0) {
            return Err(Error::InvalidArgument(format!("H is not symmetric (asymmetry {asym:e})")));
        }
        Ok(())
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    /// Plain-text dump: one `name rows cols` header per block followed by
    /// row-major values in `{:e}` format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let blocks: [(&str, &Matrix); 3] = [("H", &self.h), ("Aeq", &self.aeq), ("Ain", &self.ain)];
        for (name, m) in blocks {
            dump(&mut out, name, m.nrows(), m.ncols(), |i, j| m[(i, j)]);
        }
        let vecs: [(&str, &Vector); 3] = [("f", &self.f), ("beq", &self.beq), ("bin", &self.bin)];
        for (name, v) in vecs {
            dump(&mut out, name, v.len(), 1, |i, _| v[i]);
        }
        out
    }
}

fn dump(out: &mut String, name: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) {
    let _ = writeln!(out, "{name} {rows} {cols}");
    for i in 0..rows {
        for j in 0..cols {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:e}", at(i, j));
        }
        out.push('\n');
    }
}

fn max_abs_m(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    pub status: QpStatus,
    pub objective: f64,
    pub eq_multipliers: Vector,
    pub in_multipliers: Vector,
    /// Indices of the inequality rows in the final working set.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// The reduced Hessian needed the `1e-10·I` shift to factor.
    pub regularized: bool,
    /// Descent ray certifying an `Unbounded` verdict.
    pub unbounded_ray: Option<Vector>,
}

impl QpSolution {
    fn failed(n: usize, p: usize, q: usize, status: QpStatus, iterations: usize) -> Self {
        Self {
            z: Vector::zeros(n),
            status,
            objective: f64::NAN,
            eq_multipliers: Vector::zeros(p),
            in_multipliers: Vector::zeros(q),
            active_set: Vec::new(),
            iterations,
            regularized: false,
            unbounded_ray: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Absolute KKT residuals together with the scales used to judge them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub equality: f64,
    pub inequality: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
    pub primal_scale: f64,
    pub dual_scale: f64,
}

impl KktReport {
    /// True when every residual is within `factor · tol` of its scale.
    pub fn passes(&self, tol: &Tolerances, factor: f64) -> bool {
        let p = factor * tol.primal * self.primal_scale;
        let d = factor * tol.dual * self.dual_scale;
        self.equality <= p
            && self.inequality <= p
            && self.stationarity <= d
            && self.dual_sign <= d
            && self.complementarity <= factor * tol.primal.max(tol.dual) * self.primal_scale * self.dual_scale
    }
}

/// Independent KKT check of a candidate solution.
pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> KktReport {
    let z = &sol.z;
    let r_eq = &p.aeq * z - &p.beq;
    let r_in = &p.ain * z - &p.bin;
    let hz = &p.h * z;
    let at_eq = p.aeq.tr_mul(&sol.eq_multipliers);
    let at_in = p.ain.tr_mul(&sol.in_multipliers);
    let grad = &hz + &p.f + &at_eq + &at_in;
    let complementarity = sol
        .in_multipliers
        .iter()
        .zip(r_in.iter())
        .fold(0.0f64, |acc, (l, r)| acc.max((l * r).abs()));
    let dual_sign = sol.in_multipliers.iter().fold(0.0f64, |acc, &l| acc.max(-l));
    KktReport {
        equality: max_abs(&r_eq),
        inequality: r_in.iter().fold(0.0f64, |acc, &r| acc.max(r)),
        stationarity: max_abs(&grad),
        complementarity,
        dual_sign,
        primal_scale: 1.0 + max_abs(&p.beq).max(max_abs(&p.bin)),
        dual_scale: 1.0
            + max_abs(&hz)
                .max(max_abs(&p.f))
                .max(max_abs(&at_eq))
                .max(max_abs(&at_in)),
    }
}

/// A QP prepared for repeated solves in which only `beq` changes.
///
/// Construction factors the equality matrix and the reduced Hessian once;
/// [`QpSolver::solve`] then costs one dual active-set run.
#[derive(Debug, Clone)]
pub struct QpSolver {
    n: usize,
    h: Matrix,
    f: Vector,
    aeq: Matrix,
    ain: Matrix,
    bin: Vector,
    /// Right pseudo-inverse of `Aeq` (N × p).
    pinv: Matrix,
    /// Orthonormal nullspace basis of `Aeq` (N × r).
    z: Matrix,
    chol_l: Matrix,
    j0: Matrix,
    c: Matrix,
    c_pinv: Matrix,
    zth_pinv: Matrix,
    ztf: Vector,
    regularized: bool,
    tol: Tolerances,
}

impl QpSolver {
    pub fn new(p: &QpProblem, tol: Tolerances) -> Result<Self> {
        p.validate()?;
        let n = p.num_vars();
        let (pinv, z) = nullspace(&p.aeq);
        let zt = z.transpose();
        let zth = &zt * &p.h;
        let g = &zth * &z;
        let nr = z.ncols();
        let (chol_l, regularized) = if nr == 0 {
            (Matrix::zeros(0, 0), false)
        } else {
            let gs = (&g + g.transpose()) * 0.5;
            match gs.clone().cholesky() {
                Some(ch) => (ch.l(), false),
                None => {
                    let shifted = gs + Matrix::identity(nr, nr) * 1e-10;
                    let ch = shifted
                        .cholesky()
                        .ok_or(Error::NotPositiveDefinite("reduced Hessian"))?;
                    (ch.l(), true)
                }
            }
        };
        let mut j0 = Matrix::identity(nr, nr);
        if nr > 0 && !chol_l.solve_lower_triangular_mut(&mut j0) {
            return Err(Error::NotPositiveDefinite("reduced Hessian"));
        }
        let j0 = j0.transpose();
        let c = &p.ain * &z;
        let c_pinv = &p.ain * &pinv;
        let zth_pinv = &zth * &pinv;
        let ztf = &zt * &p.f;
        Ok(Self {
            n,
            h: p.h.clone(),
            f: p.f.clone(),
            aeq: p.aeq.clone(),
            ain: p.ain.clone(),
            bin: p.bin.clone(),
            pinv,
            z,
            chol_l,
            j0,
            c,
            c_pinv,
            zth_pinv,
            ztf,
            regularized,
            tol,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_eq(&self) -> usize {
        self.aeq.nrows()
    }

    pub fn num_in(&self) -> usize {
        self.ain.nrows()
    }

    /// Degrees of freedom left after eliminating the equalities.
    pub fn reduced_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// Solves with right-hand side `beq`, seeding the working set with `warm`.
    pub fn solve(&self, beq: &Vector, warm: &[usize]) -> Result<QpSolution> {
        let p = self.aeq.nrows();
        let q = self.ain.nrows();
        if beq.len() != p {
            return Err(Error::dim("beq", p, beq.len()));
        }
        let nz: Vec<usize> = (0..p).filter(|&i| beq[i] != 0.0).collect();
        let mut zp = Vector::zeros(self.n);
        let mut a = self.ztf.clone();
        let mut d = self.bin.clone();
        for &i in &nz {
            let bi = beq[i];
            zp.axpy(bi, &self.pinv.column(i), 1.0);
            a.axpy(bi, &self.zth_pinv.column(i), 1.0);
            d.axpy(-bi, &self.c_pinv.column(i), 1.0);
        }
        let eq_res = max_abs(&(&self.aeq * &zp - beq));
        if eq_res > self.tol.primal * (1.0 + max_abs(beq)) {
            return Ok(QpSolution::failed(self.n, p, q, QpStatus::Infeasible, 0));
        }

        let red = active_set::solve(&self.chol_l, &self.j0, &a, &self.c, &d, warm, &self.tol);
        let z = &zp + &self.z * &red.w;
        let mut lin = Vector::zeros(q);
        for (&i, &u) in red.active.iter().zip(&red.multipliers) {
            lin[i] = u;
        }
        let mut grad = &self.h * &z + &self.f;
        grad += self.ain.tr_mul(&lin);
        let leq = -self.pinv.tr_mul(&grad);
        let objective = 0.5 * z.dot(&(&self.h * &z)) + self.f.dot(&z);
        Ok(QpSolution {
            z,
            status: red.status,
            objective,
            eq_multipliers: leq,
            in_multipliers: lin,
            active_set: red.active,
            iterations: red.iterations,
            regularized: self.regularized,
            unbounded_ray: None,
        })
    }
}

/// Pseudo-inverse and orthonormal nullspace basis of `a` via a square SVD.
pub(crate) fn nullspace(a: &Matrix) -> (Matrix, Matrix) {
    let (p, n) = a.shape();
    if p == 0 {
        return (Matrix::zeros(n, 0), Matrix::identity(n, n));
    }
    let rows = p.max(n);
    let mut padded = Matrix::zeros(rows, n);
    padded.view_mut((0, 0), (p, n)).copy_from(a);
    let svd = SVD::new(padded, true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let thresh = smax * 1e-12 * (rows as f64);
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let rank = order.iter().filter(|&&i| sv[i] > thresh).count();

    let mut pinv = Matrix::zeros(n, p);
    for &k in &order[..rank] {
        let vk = vt.row(k).transpose();
        let uk = u.view((0, k), (p, 1));
        pinv += (&vk * uk.transpose()) / sv[k];
    }
    let mut z = Matrix::zeros(n, n - rank);
    for (c, &k) in order[rank..].iter().enumerate() {
        z.set_column(c, &vt.row(k).transpose());
    }
    (pinv, z)
}

/// Solves a QP. Problems with `H = 0` are dispatched to the simplex method.
pub fn solve_qp(p: &QpProblem, warm: Option<&QpSolution>, tol: &Tolerances) -> Result<QpSolution> {
    p.validate()?;
    if p.h.iter().all(|&v| v == 0.0) {
        return Ok(solve_lp_checked(p, tol));
    }
    let solver = QpSolver::new(p, *tol)?;
    let seed = warm.map(|w| w.active_set.as_slice()).unwrap_or(&[]);
    solver.solve(&p.beq, seed)
}

/// Solves `min fᵀz  s.t.  Aeq z = beq, Ain z ≤ bin` with free `z`.
pub fn solve_lp(f: &Vector, aeq: &Matrix, beq: &Vector, ain: &Matrix, bin: &Vector, tol: &Tolerances) -> Result<QpSolution> {
    let p = QpProblem::linear(f.clone(), aeq.clone(), beq.clone(), ain.clone(), bin.clone())?;
    Ok(solve_lp_checked(&p, tol))
}

fn primal_violation(p: &QpProblem, z: &Vector) -> f64 {
    let eq = max_abs(&(&p.aeq * z - &p.beq));
    let ineq = (&p.ain * z - &p.bin).iter().fold(0.0f64, |acc, &v| acc.max(v));
    eq.max(ineq)
}

/// Projects a simplex vertex onto the rows active at it (equalities and rows
/// with zero slack). Splitting free variables lets round-off in large basic
/// values leak into `z`; the projection removes it.
fn polish(p: &QpProblem, z: Vector, slack: &Vector, tol: &Tolerances) -> Vector {
    let before = primal_violation(p, &z);
    if before <= tol.primal * (1.0 + max_abs(&p.beq).max(max_abs(&p.bin))) {
        return z;
    }
    let active: Vec<usize> = (0..slack.len()).filter(|&i| slack[i] == 0.0).collect();
    let rows = p.aeq.nrows() + active.len();
    let mut a = Matrix::zeros(rows, z.len());
    let mut r = Vector::zeros(rows);
    a.view_mut((0, 0), p.aeq.shape()).copy_from(&p.aeq);
    r.rows_mut(0, p.aeq.nrows()).copy_from(&(&p.beq - &p.aeq * &z));
    for (k, &i) in active.iter().enumerate() {
        a.set_row(p.aeq.nrows() + k, &p.ain.row(i));
        r[p.aeq.nrows() + k] = p.bin[i] - p.ain.row(i).dot(&z.transpose());
    }
    let Ok(dz) = SVD::new(a, true, true).solve(&r, 1e-12) else {
        return z;
    };
    let candidate = &z + dz;
    if primal_violation(p, &candidate) < before {
        candidate
    } else {
        z
    }
}

fn solve_lp_checked(p: &QpProblem, tol: &Tolerances) -> QpSolution {
    let n = p.num_vars();
    let pe = p.aeq.nrows();
    let q = p.ain.nrows();
    // Rows are equilibrated to unit max-norm; row i is multiplied by d[i].
    let mut stacked = Matrix::zeros(pe + q, n);
    stacked.view_mut((0, 0), (pe, n)).copy_from(&p.aeq);
    stacked.view_mut((pe, 0), (q, n)).copy_from(&p.ain);
    let d = Vector::from_fn(pe + q, |i, _| {
        let norm = stacked.row(i).amax();
        if norm > 0.0 {
            1.0 / norm
        } else {
            1.0
        }
    });
    for i in 0..pe + q {
        stacked.row_mut(i).scale_mut(d[i]);
    }
    // z = z⁺ − z⁻, slack s for the inequality rows.
    let cols = 2 * n + q;
    let mut a = Matrix::zeros(pe + q, cols);
    a.view_mut((0, 0), (pe + q, n)).copy_from(&stacked);
    a.view_mut((0, n), (pe + q, n)).copy_from(&(-&stacked));
    for i in 0..q {
        a[(pe + i, 2 * n + i)] = 1.0;
    }
    let mut b = Vector::zeros(pe + q);
    b.rows_mut(0, pe).copy_from(&p.beq);
    b.rows_mut(pe, q).copy_from(&p.bin);
    b.component_mul_assign(&d);
    let mut c = Vector::zeros(cols);
    c.rows_mut(0, n).copy_from(&p.f);
    c.rows_mut(n, n).copy_from(&(-&p.f));

    let split = |x: &Vector| -> Vector { x.rows(0, n) - x.rows(n, n) };
    match solve_standard(&a, &b, &c, tol.max_iter) {
        StandardOutcome::Optimal { x, y, iterations, .. } => {
            let z = polish(p, split(&x), &x.rows(2 * n, q).into_owned(), tol);
            let scale = 1.0 + max_abs(&p.beq).max(max_abs(&p.bin));
            if primal_violation(p, &z) > 1e3 * tol.primal * scale {
                let mut sol = QpSolution::failed(n, pe, q, QpStatus::Inaccurate, iterations);
                sol.z = z;
                return sol;
            }
            let lam = -y.component_mul(&d);
            let mut lin = lam.rows(pe, q).into_owned();
            // clamp roundoff on inactive rows
            for v in lin.iter_mut() {
                if *v < 0.0 && *v > -1e-12 {
                    *v = 0.0;
                }
            }
            let r_in = &p.ain * &z - &p.bin;
            let active_set = (0..q)
                .filter(|&i| r_in[i].abs() <= tol.primal * (1.0 + p.bin[i].abs()) && lin[i] > 0.0)
                .collect();
            QpSolution {
                objective: p.f.dot(&z),
                z,
                status: QpStatus::Optimal,
                eq_multipliers: lam.rows(0, pe).into_owned(),
                in_multipliers: lin,
                active_set,
                iterations,
                regularized: false,
                unbounded_ray: None,
            }
        }
        StandardOutcome::Unbounded { x, ray, iterations } => {
            let mut sol = QpSolution::failed(n, pe, q, QpStatus::Unbounded, iterations);
            sol.z = split(&x);
            sol.objective = f64::NEG_INFINITY;
            sol.unbounded_ray = Some(split(&ray));
            sol
        }
        StandardOutcome::Infeasible { iterations } => {
            QpSolution::failed(n, pe, q, QpStatus::Infeasible, iterations)
        }
        StandardOutcome::MaxIter { iterations } => {
            QpSolution::failed(n, pe, q, QpStatus::MaxIter, iterations)
        }
    }
}
