//! Parametrized infinite-horizon MPC for linear time-invariant plants.
//!
//! With `z = (η_x, η_u)` the controller solves
//!
//! ```text
//!     minimize    η_xᵀ (Q ⊗ J̄) η_x + η_uᵀ (R ⊗ J̄) η_u
//!     subject to  (I_n ⊗ Mᵀ − A ⊗ I_s) η_x − (B ⊗ I_s) η_u = 0
//!                 (I_n ⊗ τ(0))ᵀ η_x = x₀
//!                 (Cx ⊗ τ(k)ᵀ) η_x + (Cu ⊗ τ(k)ᵀ) η_u ≤ b,   k = 0..=N_max
//! ```
//!
//! The objective equals the infinite-horizon cost `Σ_k l(x̃(k), ũ(k))` of the
//! parametrized trajectories.

use alloc::vec::Vec;

use crate::admissible::{stacked_constraints, AffineConstraintSet};
use crate::basis::{BasisFamily, ParamVector};
use crate::linalg::{self, kron};
use crate::qp::{QpProblem, QpSolver, QpStatus, Tolerances};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiProblem {
    pub a: Matrix,
    pub b: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub cons: AffineConstraintSet,
    pub ts: f64,
}

impl LtiProblem {
    /// Validates dimensions, `Q ≻ 0` and `R ⪰ 0`.
    pub fn new(a: Matrix, b: Matrix, q: Matrix, r: Matrix, cons: AffineConstraintSet, ts: f64) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if !a.is_square() {
            return Err(Error::dim("A columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(Error::dim("B rows", n, b.nrows()));
        }
        if q.shape() != (n, n) {
            return Err(Error::dim("Q", n, q.nrows()));
        }
        if r.shape() != (m, m) {
            return Err(Error::dim("R", m, r.nrows()));
        }
        if cons.num_states() != n || cons.num_inputs() != m {
            return Err(Error::dim("constraint columns", n + m, cons.num_states() + cons.num_inputs()));
        }
        if !(ts > 0.0) {
            return Err(Error::InvalidArgument("sampling time must be positive".into()));
        }
        for (name, mat) in [("Q", &q), ("R", &r)] {
            let asym = (mat - mat.transpose()).amax();
            if asym > 1e-12 * mat.amax().max(1.0) {
                return Err(Error::InvalidArgument(alloc::format!("{name} is not symmetric")));
            }
        }
        if q.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("Q"));
        }
        if m > 0 && linalg::min_sym_eigenvalue(&r) < -1e-12 * r.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("R"));
        }
        Ok(Self { a, b, q, r, cons, ts })
    }

    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `l(x, u) = xᵀQx + uᵀRu`.
    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    /// `A x + B u`.
    pub fn next_state(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

/// One axis of a quadruple integrator `x⁽⁴⁾ = u` with state `(x, ẋ, ẍ, x⃛)`,
/// discretized by zero-order hold, cost `|x|² + r·u²` and `|u| ≤ u_max`.
pub fn quadruple_integrator(r: f64, u_max: f64, ts: f64) -> Result<LtiProblem> {
    let ac = Matrix::from_fn(4, 4, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut bc = Matrix::zeros(4, 1);
    bc[(3, 0)] = 1.0;
    let (a, b) = linalg::zoh(&ac, &bc, ts)?;
    let cons = AffineConstraintSet::boxes(4, 1, &[], &[(0, u_max)])?;
    LtiProblem::new(a, b, Matrix::identity(4, 4), Matrix::from_element(1, 1, r), cons, ts)
}

/// Number of dynamics rows `n·s` followed by `n` initial-condition rows.
fn equality_matrix(problem: &LtiProblem, family: &BasisFamily) -> Matrix {
    let n = problem.num_states();
    let m = problem.num_inputs();
    let s = family.dim();
    let eye_s = Matrix::identity(s, s);
    let mut aeq = Matrix::zeros(n * s + n, (n + m) * s);
    let dyn_x = kron(&Matrix::identity(n, n), &family.shift_matrix().transpose()) - kron(&problem.a, &eye_s);
    aeq.view_mut((0, 0), (n * s, n * s)).copy_from(&dyn_x);
    aeq.view_mut((0, n * s), (n * s, m * s))
        .copy_from(&(-kron(&problem.b, &eye_s)));
    let tau0 = family.tau0();
    for i in 0..n {
        for l in 0..s {
            aeq[(n * s + i, i * s + l)] = tau0[l];
        }
    }
    aeq
}

/// Builds the QP for horizon `nmax`, with `x₀ = 0` in the last `n` entries of
/// `beq`. The Hessian is `2·blockdiag(Q ⊗ J̄, R ⊗ J̄)` so that the objective
/// `½ zᵀHz` equals the trajectory cost.
pub fn assemble(problem: &LtiProblem, family: &BasisFamily, nmax: usize) -> Result<QpProblem> {
    let n = problem.num_states();
    let m = problem.num_inputs();
    let s = family.dim();
    let gram = family.gram()?;
    let j = gram.as_matrix();
    let hx = kron(&problem.q, j);
    let hu = kron(&problem.r, j);
    let h = linalg::block_diag(&[&hx, &hu]) * 2.0;
    let h = (&h + h.transpose()) * 0.5;
    let aeq = equality_matrix(problem, family);
    let beq = Vector::zeros(n * s + n);
    let (ain, bin) = stacked_constraints(family, &problem.cons, nmax + 1);
    QpProblem::new(h, Vector::zeros((n + m) * s), aeq, beq, ain, bin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularity {
    pub regular: bool,
    pub rank: usize,
    pub expected: usize,
    /// Smallest of the leading `expected` singular values.
    pub sigma_min: f64,
}

/// Whether the stacked dynamics and initial-condition equalities have full
/// row rank `n·s + n`, i.e. are solvable for every `x₀`.
pub fn check_regularity(problem: &LtiProblem, family: &BasisFamily) -> Regularity {
    let aeq = equality_matrix(problem, family);
    let expected = aeq.nrows();
    let sv = linalg::singular_values(&aeq);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&v| v > 1e-10 * smax.max(1.0)).count();
    let sigma_min = if expected == 0 {
        f64::INFINITY
    } else {
        sv.get(expected - 1).copied().unwrap_or(0.0)
    };
    Regularity {
        regular: rank == expected,
        rank,
        expected,
        sigma_min,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcStepResult {
    pub eta_x: ParamVector,
    pub eta_u: ParamVector,
    pub u0: Vector,
    /// `J(x₀)`, the cost of the planned trajectories.
    pub cost: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub active_constraints: usize,
}

impl MpcStepResult {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Receding-horizon controller: assembles once, re-binds `x₀` per step and
/// warm-starts each solve from the previous working set shifted by one sample.
#[derive(Debug, Clone)]
pub struct LtiController {
    problem: LtiProblem,
    family: BasisFamily,
    nmax: usize,
    qp: QpProblem,
    solver: QpSolver,
    warm: Vec<usize>,
    warm_start: bool,
}

impl LtiController {
    pub fn new(problem: LtiProblem, family: BasisFamily, nmax: usize) -> Result<Self> {
        Self::with_tolerances(problem, family, nmax, Tolerances::default())
    }

    pub fn with_tolerances(problem: LtiProblem, family: BasisFamily, nmax: usize, tol: Tolerances) -> Result<Self> {
        let qp = assemble(&problem, &family, nmax)?;
        let solver = QpSolver::new(&qp, tol)?;
        Ok(Self {
            problem,
            family,
            nmax,
            qp,
            solver,
            warm: Vec::new(),
            warm_start: true,
        })
    }

    pub fn problem(&self) -> &LtiProblem {
        &self.problem
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    /// The assembled QP with `x₀ = 0`.
    pub fn qp(&self) -> &QpProblem {
        &self.qp
    }

    pub fn solver(&self) -> &QpSolver {
        &self.solver
    }

    pub fn set_warm_start(&mut self, on: bool) {
        self.warm_start = on;
        if !on {
            self.warm.clear();
        }
    }

    /// Forgets the stored working set.
    pub fn reset(&mut self) {
        self.warm.clear();
    }

    /// `beq` for the initial state `x0`.
    pub fn bind(&self, x0: &Vector) -> Vector {
        let n = self.problem.num_states();
        let s = self.family.dim();
        let mut beq = Vector::zeros(n * s + n);
        beq.rows_mut(n * s, n).copy_from(x0);
        beq
    }

    fn run(&self, x0: &Vector, warm: &[usize]) -> Result<(MpcStepResult, Vec<usize>)> {
        let n = self.problem.num_states();
        let m = self.problem.num_inputs();
        if x0.len() != n {
            return Err(Error::dim("initial state", n, x0.len()));
        }
        if let Some(i) = (0..n).find(|&i| !x0[i].is_finite()) {
            return Err(Error::NonFinite { k: i, what: "initial state" });
        }
        let s = self.family.dim();
        let sol = self.solver.solve(&self.bind(x0), warm)?;
        let eta_x = ParamVector::new(sol.z.rows(0, n * s).into_owned(), n)?;
        let eta_u = ParamVector::new(sol.z.rows(n * s, m * s).into_owned(), m)?;
        let u0 = self.family.eval(&eta_u, 0)?;
        let result = MpcStepResult {
            eta_x,
            eta_u,
            u0,
            cost: sol.objective,
            status: sol.status,
            iterations: sol.iterations,
            active_constraints: sol.active_set.len(),
        };
        Ok((result, sol.active_set))
    }

    /// Solves for `x0` from the working set `warm`, leaving the controller unchanged.
    pub fn solve(&self, x0: &Vector, warm: &[usize]) -> Result<MpcStepResult> {
        self.run(x0, warm).map(|(r, _)| r)
    }

    /// One receding-horizon step from the measured state `x0`.
    pub fn step(&mut self, x0: &Vector) -> Result<MpcStepResult> {
        let warm = core::mem::take(&mut self.warm);
        let (result, active) = self.run(x0, &warm)?;
        if self.warm_start && result.is_optimal() {
            // row (k, i) becomes row (k − 1, i) after one sample
            let nc = self.problem.cons.num_constraints();
            self.warm = active.into_iter().filter(|&r| r >= nc).map(|r| r - nc).collect();
        }
        Ok(result)
    }
}

/// `max_k ‖x̃(k+1) − A x̃(k) − B ũ(k)‖∞ / (1 + ‖x̃(k)‖∞)` for `k < horizon`.
pub fn dynamics_residual(problem: &LtiProblem, family: &BasisFamily, eta_x: &ParamVector, eta_u: &ParamVector, horizon: usize) -> Result<f64> {
    let xs = family.trajectory(eta_x, horizon + 1)?;
    let us = family.trajectory(eta_u, horizon)?;
    let mut worst = 0.0f64;
    for k in 0..horizon {
        let xk = xs.column(k).into_owned();
        let pred = &problem.a * &xk + &problem.b * us.column(k);
        let r = (xs.column(k + 1) - pred).amax() / (1.0 + xk.amax());
        worst = worst.max(r);
    }
    Ok(worst)
}
