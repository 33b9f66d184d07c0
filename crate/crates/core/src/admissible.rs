//! Constraint horizon `N_max` for parametrized trajectories.
//!
//! Given affine constraints `Cx x + Cu u ≤ b` and a basis family, finds a
//! horizon `N_max` such that any coefficient vector satisfying the
//! constraints at samples `0..=N_max` satisfies them at every sample.
//!
//! Iteration `j` checks, for every row `i`, the LP
//!
//! ```text
//!     J_i = max  g_i(x̃(j+1), ũ(j+1))   s.t.  g(x̃(k), ũ(k)) ≤ 0,  k = 0..=j
//! ```
//!
//! and stops at the first `j` where all `J_i ≤ 0`. Each LP is solved through
//! its dual `min bᵀy  s.t.  Gᵀy = c, y ≥ 0`, whose equality system has only as
//! many rows as there are coefficients. A dual without feasible points means
//! an unbounded primal, which is recorded as `J_i = +∞`.

use alloc::vec;
use alloc::vec::Vec;

use crate::basis::BasisFamily;
use crate::linalg::max_abs;
use crate::qp::{solve_standard, StandardOutcome};
use crate::{Error, Matrix, Result, Vector};

/// Rows `g_i(x, u) = (Cx x + Cu u − b)_i ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraintSet {
    cx: Matrix,
    cu: Matrix,
    b: Vector,
}

impl AffineConstraintSet {
    /// Requires `b > 0`, so that the origin is strictly feasible.
    pub fn new(cx: Matrix, cu: Matrix, b: Vector) -> Result<Self> {
        let nc = b.len();
        if cx.nrows() != nc {
            return Err(Error::dim("Cx rows", nc, cx.nrows()));
        }
        if cu.nrows() != nc {
            return Err(Error::dim("Cu rows", nc, cu.nrows()));
        }
        if !crate::linalg::is_finite(&cx) || !crate::linalg::is_finite(&cu) {
            return Err(Error::InvalidArgument("constraint matrices must be finite".into()));
        }
        if let Some(i) = (0..nc).find(|&i| !(b[i] > 0.0 && b[i].is_finite())) {
            return Err(Error::InvalidArgument(alloc::format!(
                "constraint bound {i} must be positive and finite, got {}",
                b[i]
            )));
        }
        Ok(Self { cx, cu, b })
    }

    /// No constraints on `n` states and `m` inputs.
    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            cx: Matrix::zeros(0, n),
            cu: Matrix::zeros(0, m),
            b: Vector::zeros(0),
        }
    }

    /// Symmetric bounds `|x_i| ≤ x_max` and `|u_j| ≤ u_max`, two rows each.
    pub fn boxes(n: usize, m: usize, state: &[(usize, f64)], input: &[(usize, f64)]) -> Result<Self> {
        let nc = 2 * (state.len() + input.len());
        let mut cx = Matrix::zeros(nc, n);
        let mut cu = Matrix::zeros(nc, m);
        let mut b = Vector::zeros(nc);
        let mut r = 0;
        for &(i, bound) in state {
            if i >= n {
                return Err(Error::dim("state bound index", n, i));
            }
            cx[(r, i)] = 1.0;
            cx[(r + 1, i)] = -1.0;
            b[r] = bound;
            b[r + 1] = bound;
            r += 2;
        }
        for &(j, bound) in input {
            if j >= m {
                return Err(Error::dim("input bound index", m, j));
            }
            cu[(r, j)] = 1.0;
            cu[(r + 1, j)] = -1.0;
            b[r] = bound;
            b[r + 1] = bound;
            r += 2;
        }
        Self::new(cx, cu, b)
    }

    pub fn cx(&self) -> &Matrix {
        &self.cx
    }

    pub fn cu(&self) -> &Matrix {
        &self.cu
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn num_states(&self) -> usize {
        self.cx.ncols()
    }

    pub fn num_inputs(&self) -> usize {
        self.cu.ncols()
    }

    /// `Cx x + Cu u − b`.
    pub fn evaluate(&self, x: &Vector, u: &Vector) -> Vector {
        &self.cx * x + &self.cu * u - &self.b
    }

    /// Largest value of `g_i(x, u)`; nonpositive means feasible.
    pub fn max_violation(&self, x: &Vector, u: &Vector) -> f64 {
        self.evaluate(x, u).iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
    }

    /// Combined row block `[Cx Cu]`.
    fn stacked(&self) -> Matrix {
        let (nc, n, m) = (self.b.len(), self.cx.ncols(), self.cu.ncols());
        let mut c = Matrix::zeros(nc, n + m);
        c.view_mut((0, 0), (nc, n)).copy_from(&self.cx);
        c.view_mut((0, n), (nc, m)).copy_from(&self.cu);
        c
    }
}

/// Builds the row block `(C ⊗ τ(k)ᵀ)` restricted to `channels`, i.e. the
/// coefficients of `g(x̃(k), ũ(k)) + b` in the selected channel blocks.
fn sample_rows(c: &Matrix, channels: &[usize], tau: &Vector) -> Matrix {
    let s = tau.len();
    let mut out = Matrix::zeros(c.nrows(), channels.len() * s);
    for (slot, &ch) in channels.iter().enumerate() {
        for i in 0..c.nrows() {
            let w = c[(i, ch)];
            if w != 0.0 {
                for l in 0..s {
                    out[(i, slot * s + l)] = w * tau[l];
                }
            }
        }
    }
    out
}

/// Stacked inequality rows for samples `0..count` over all `n + m` channels,
/// laid out for `z = (η_x, η_u)`: returns `(G, h)` with `G z ≤ h`.
pub fn stacked_constraints(family: &BasisFamily, cons: &AffineConstraintSet, count: usize) -> (Matrix, Vector) {
    let c = cons.stacked();
    let channels: Vec<usize> = (0..c.ncols()).collect();
    let nc = cons.num_constraints();
    let s = family.dim();
    let mut g = Matrix::zeros(nc * count, c.ncols() * s);
    let mut h = Vector::zeros(nc * count);
    let mut tau = family.tau0().clone();
    for k in 0..count {
        g.view_mut((k * nc, 0), (nc, c.ncols() * s))
            .copy_from(&sample_rows(&c, &channels, &tau));
        h.rows_mut(k * nc, nc).copy_from(cons.b());
        tau = family.shift_matrix() * tau;
    }
    (g, h)
}

/// Where the search over `j` begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartIndex {
    /// `j = (n + m)·s`.
    Verbatim,
    /// `j = 0`, which returns the smallest certified horizon.
    Zero,
    At(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmaxOptions {
    pub start: StartIndex,
    /// Adds the dynamics equality `(I⊗Mᵀ − A⊗I)η_x − (B⊗I)η_u = 0` for the given `(A, B)`.
    pub dynamics: Option<(Matrix, Matrix)>,
    /// Defaults to `50·(n+m)·s`.
    pub j_cap: Option<usize>,
    /// `J_i` is accepted when `≤ rel_tol·max(1, ‖b‖∞)`.
    pub rel_tol: f64,
    pub max_lp_iter: usize,
}

impl Default for NmaxOptions {
    fn default() -> Self {
        Self {
            start: StartIndex::Verbatim,
            dynamics: None,
            j_cap: None,
            rel_tol: 1e-9,
            max_lp_iter: 100_000,
        }
    }
}

/// LP values of one iteration; `+∞` marks a certified unbounded LP.
#[derive(Debug, Clone, PartialEq)]
pub struct NmaxIteration {
    pub j: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmaxResult {
    pub nmax: usize,
    pub start: usize,
    pub iterations: usize,
    /// Final `J_i`, all `≤ tol`.
    pub certificates: Vec<f64>,
    pub tol: f64,
    pub table: Vec<NmaxIteration>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NmaxError {
    #[error("no horizon certified up to j = {j_cap}")]
    CapReached { j_cap: usize, table: Vec<NmaxIteration> },
    #[error("LP for constraint {constraint} at j = {j} hit its iteration limit")]
    LpFailed { j: usize, constraint: usize },
    #[error(transparent)]
    Invalid(#[from] Error),
}

/// Prepared data shared by all iterations.
struct Search<'a> {
    family: &'a BasisFamily,
    c: Matrix,
    b: Vector,
    channels: Vec<usize>,
    /// Nullspace basis of the dynamics rows when coupling is requested; the
    /// coefficients are then `Z w`.
    z: Option<Matrix>,
    max_lp_iter: usize,
}

impl Search<'_> {
    fn nv(&self) -> usize {
        self.channels.len() * self.family.dim()
    }

    /// `J_i` for all rows, given the stacked rows `g` for samples `0..=j` and the
    /// sample-`j+1` rows `next`.
    fn values(&self, g: &Matrix, next: &Matrix, j: usize) -> core::result::Result<Vec<f64>, NmaxError> {
        let (a, next) = match &self.z {
            Some(z) => ((g * z).transpose(), next * z),
            None => (g.transpose(), next.clone()),
        };
        let rows = g.nrows();
        let nc = self.b.len();
        let cost = Vector::from_fn(rows, |r, _| self.b[r % nc]);
        let mut out = Vec::with_capacity(nc);
        for i in 0..nc {
            let target = next.row(i).transpose();
            let v = if target.iter().all(|&t| t == 0.0) {
                // constant objective: η = 0 is optimal
                -self.b[i]
            } else {
                match solve_standard(&a, &target, &cost, self.max_lp_iter) {
                    StandardOutcome::Optimal { objective, .. } => objective - self.b[i],
                    StandardOutcome::Infeasible { .. } => f64::INFINITY,
                    // the dual cost is nonnegative on y ≥ 0
                    StandardOutcome::Unbounded { .. } | StandardOutcome::MaxIter { .. } => {
                        return Err(NmaxError::LpFailed { j, constraint: i })
                    }
                }
            };
            out.push(v);
        }
        Ok(out)
    }
}

/// Runs the horizon search.
pub fn compute_nmax(
    family: &BasisFamily,
    cons: &AffineConstraintSet,
    opts: &NmaxOptions,
) -> core::result::Result<NmaxResult, NmaxError> {
    let n = cons.num_states();
    let m = cons.num_inputs();
    let s = family.dim();
    let c = cons.stacked();
    let b = cons.b().clone();
    let nc = b.len();
    let start = match opts.start {
        StartIndex::Verbatim => (n + m) * s,
        StartIndex::Zero => 0,
        StartIndex::At(j) => j,
    };
    let j_cap = opts.j_cap.unwrap_or(50 * (n + m) * s).max(start);
    let tol = opts.rel_tol * max_abs(&b).max(1.0);

    let (channels, z) = match &opts.dynamics {
        Some((a_mat, b_mat)) => {
            if a_mat.shape() != (n, n) || b_mat.shape() != (n, m) {
                return Err(Error::dim("dynamics for N_max", n, a_mat.nrows()).into());
            }
            let eye_n = Matrix::identity(n, n);
            let mt = family.shift_matrix().transpose();
            let eye_s = Matrix::identity(s, s);
            let ex = crate::linalg::kron(&eye_n, &mt) - crate::linalg::kron(a_mat, &eye_s);
            let eu = -crate::linalg::kron(b_mat, &eye_s);
            let mut e = Matrix::zeros(n * s, (n + m) * s);
            e.view_mut((0, 0), (n * s, n * s)).copy_from(&ex);
            e.view_mut((0, n * s), (n * s, m * s)).copy_from(&eu);
            let (_, z) = crate::qp::nullspace(&e);
            ((0..n + m).collect::<Vec<_>>(), Some(z))
        }
        None => {
            let used = (0..n + m)
                .filter(|&ch| (0..nc).any(|i| c[(i, ch)] != 0.0))
                .collect::<Vec<_>>();
            (used, None)
        }
    };
    let search = Search {
        family,
        c,
        b,
        channels,
        z,
        max_lp_iter: opts.max_lp_iter,
    };

    if nc == 0 {
        return Ok(NmaxResult {
            nmax: start,
            start,
            iterations: 0,
            certificates: Vec::new(),
            tol,
            table: Vec::new(),
        });
    }

    let nv = search.nv();
    let mut g = Matrix::zeros(nc * (start + 1), nv);
    let mut tau = family.tau0().clone();
    for k in 0..=start {
        g.view_mut((k * nc, 0), (nc, nv))
            .copy_from(&sample_rows(&search.c, &search.channels, &tau));
        tau = family.shift_matrix() * tau;
    }
    let mut table = Vec::new();
    let mut j = start;
    loop {
        let next = sample_rows(&search.c, &search.channels, &tau);
        let values = search.values(&g, &next, j)?;
        let done = values.iter().all(|&v| v <= tol);
        table.push(NmaxIteration {
            j,
            values: values.clone(),
        });
        if done {
            return Ok(NmaxResult {
                nmax: j,
                start,
                iterations: table.len(),
                certificates: values,
                tol,
                table,
            });
        }
        if j >= j_cap {
            return Err(NmaxError::CapReached { j_cap, table });
        }
        let rows = g.nrows();
        g = g.insert_rows(rows, nc, 0.0);
        g.view_mut((rows, 0), (nc, nv)).copy_from(&next);
        tau = family.shift_matrix() * tau;
        j += 1;
    }
}

/// Coefficients `c_0..c_{s−1}` of the monic characteristic polynomial
/// `λ^s + c_{s−1} λ^{s−1} + … + c_0` of `m` (Faddeev–LeVerrier).
pub fn characteristic_polynomial(m: &Matrix) -> Vec<f64> {
    let s = m.nrows();
    let mut coeffs = vec![0.0; s + 1];
    coeffs[s] = 1.0;
    let eye = Matrix::identity(s, s);
    let mut mk = Matrix::zeros(s, s);
    for k in 1..=s {
        mk = m * &mk + &eye * coeffs[s - k + 1];
        coeffs[s - k] = -(m * &mk).trace() / k as f64;
    }
    coeffs.truncate(s);
    coeffs
}

/// Autonomous lift `z̄(k+1) = (C ⊗ I_d) z̄(k)` with `z̄(k) = (z(k), …, z(k+s−1))`,
/// where `C` is the companion matrix of the characteristic polynomial of `M`
/// and `z(k)` is a `d`-channel parametrized trajectory. For diagnostics only.
pub fn companion_form(family: &BasisFamily, d: usize) -> Matrix {
    let s = family.dim();
    let coeffs = characteristic_polynomial(family.shift_matrix());
    let mut comp = Matrix::zeros(s, s);
    for i in 0..s - 1 {
        comp[(i, i + 1)] = 1.0;
    }
    for (jx, c) in coeffs.iter().enumerate() {
        comp[(s - 1, jx)] = -c;
    }
    crate::linalg::kron(&comp, &Matrix::identity(d, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::ParamVector;
    use crate::qp::{solve_lp, QpStatus, Tolerances};

    fn input_box(bound: f64) -> AffineConstraintSet {
        AffineConstraintSet::boxes(1, 1, &[], &[(0, bound)]).unwrap()
    }

    #[test]
    fn rejects_nonpositive_bounds() {
        let r = AffineConstraintSet::new(
            Matrix::zeros(1, 1),
            Matrix::from_element(1, 1, 1.0),
            Vector::from_element(1, 0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn classic_terminates_at_start() {
        let fam = BasisFamily::classic(4).unwrap();
        let cons = AffineConstraintSet::boxes(2, 1, &[(0, 1.0)], &[(0, 2.0)]).unwrap();
        let r = compute_nmax(&fam, &cons, &NmaxOptions::default()).unwrap();
        assert_eq!(r.nmax, 12);
        assert_eq!(r.iterations, 1);
        assert!(r.certificates.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn classic_two_scalar_input_lp_value() {
        // past the support every sample vanishes, so J_i = −1
        let fam = BasisFamily::classic(2).unwrap();
        let cons = AffineConstraintSet::new(
            Matrix::zeros(2, 0),
            Matrix::from_column_slice(2, 1, &[1.0, -1.0]),
            Vector::from_element(2, 1.0),
        )
        .unwrap();
        let opts = NmaxOptions {
            start: StartIndex::At(2),
            ..Default::default()
        };
        let r = compute_nmax(&fam, &cons, &opts).unwrap();
        assert_eq!(r.nmax, 2);
        for v in r.certificates {
            assert!((v + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_start_gives_minimal_classic_horizon() {
        let fam = BasisFamily::classic(3).unwrap();
        let opts = NmaxOptions {
            start: StartIndex::Zero,
            ..Default::default()
        };
        let r = compute_nmax(&fam, &input_box(1.0), &opts).unwrap();
        assert_eq!(r.nmax, 2);
    }

    #[test]
    fn certificates_match_primal_resolve() {
        let fam = BasisFamily::laguerre(3, 0.8, 0.02).unwrap();
        let cons = input_box(0.5);
        let opts = NmaxOptions {
            start: StartIndex::Zero,
            ..Default::default()
        };
        let r = compute_nmax(&fam, &cons, &opts).unwrap();
        let nmax = r.nmax;
        let (g, h) = stacked_constraints(&fam, &cons, nmax + 2);
        // drop the unconstrained state channel
        let s = fam.dim();
        let g = g.columns(s, s).into_owned();
        let nc = cons.num_constraints();
        let rows = nc * (nmax + 1);
        let tol = Tolerances::default();
        for i in 0..nc {
            let obj = -g.row(rows + i).transpose();
            let sol = solve_lp(
                &obj,
                &Matrix::zeros(0, s),
                &Vector::zeros(0),
                &g.rows(0, rows).into_owned(),
                &h.rows(0, rows).into_owned(),
                &tol,
            )
            .unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            let ji = -sol.objective - cons.b()[i];
            assert!((ji - r.certificates[i]).abs() < 1e-8, "{ji} vs {}", r.certificates[i]);
        }
    }

    #[test]
    fn restart_past_nmax_terminates_immediately() {
        let fam = BasisFamily::laguerre(3, 0.8, 0.02).unwrap();
        let cons = input_box(0.5);
        let zero = NmaxOptions {
            start: StartIndex::Zero,
            ..Default::default()
        };
        let r = compute_nmax(&fam, &cons, &zero).unwrap();
        let again = NmaxOptions {
            start: StartIndex::At(r.nmax + 5),
            ..Default::default()
        };
        let r2 = compute_nmax(&fam, &cons, &again).unwrap();
        assert_eq!(r2.iterations, 1);
        assert_eq!(r2.nmax, r.nmax + 5);
    }

    #[test]
    fn coupling_never_increases_horizon() {
        let fam = BasisFamily::laguerre(3, 0.8, 0.1).unwrap();
        let cons = AffineConstraintSet::boxes(1, 1, &[(0, 1.0)], &[(0, 0.5)]).unwrap();
        let a = Matrix::from_element(1, 1, 0.9);
        let bm = Matrix::from_element(1, 1, 0.1);
        let free = NmaxOptions {
            start: StartIndex::Zero,
            ..Default::default()
        };
        let coupled = NmaxOptions {
            dynamics: Some((a, bm)),
            ..free.clone()
        };
        let r_free = compute_nmax(&fam, &cons, &free).unwrap();
        let r_coupled = compute_nmax(&fam, &cons, &coupled).unwrap();
        assert!(r_coupled.nmax <= r_free.nmax);
    }

    #[test]
    fn cap_is_reported() {
        let fam = BasisFamily::laguerre(4, 0.1, 0.02).unwrap();
        let opts = NmaxOptions {
            start: StartIndex::Zero,
            j_cap: Some(3),
            ..Default::default()
        };
        match compute_nmax(&fam, &input_box(1.0), &opts) {
            Err(NmaxError::CapReached { j_cap, table }) => {
                assert_eq!(j_cap, 3);
                assert_eq!(table.len(), 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn characteristic_polynomial_examples() {
        assert_eq!(characteristic_polynomial(&Matrix::from_element(1, 1, 0.3)), vec![-0.3]);
        let classic = BasisFamily::classic(4).unwrap();
        assert!(characteristic_polynomial(classic.shift_matrix())
            .iter()
            .all(|&c| c == 0.0));
        let fam = BasisFamily::new(Matrix::from_element(1, 1, 0.3), Vector::from_element(1, 1.0)).unwrap();
        assert_eq!(companion_form(&fam, 1), Matrix::from_element(1, 1, 0.3));
    }

    #[test]
    fn companion_lift_propagates_trajectories() {
        let fam = BasisFamily::laguerre(3, 0.8, 0.1).unwrap();
        let d = 2;
        let s = fam.dim();
        let eta = ParamVector::new(Vector::from_fn(d * s, |i, _| (i as f64 * 0.7).sin()), d).unwrap();
        let lift = companion_form(&fam, d);
        let stack = |k: usize| {
            let mut v = Vector::zeros(s * d);
            for l in 0..s {
                v.rows_mut(l * d, d).copy_from(&fam.eval(&eta, k + l).unwrap());
            }
            v
        };
        for k in 0..50 {
            let err = (&lift * stack(k) - stack(k + 1)).amax();
            assert!(err < 1e-8, "k={k} err={err}");
        }
    }
}
