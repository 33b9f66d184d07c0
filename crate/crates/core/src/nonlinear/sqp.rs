//! Gauss–Newton SQP over the basis coefficients.
//!
//! Each iteration linearizes the Galerkin residual at the current iterate and
//! solves the QP
//!
//! ```text
//!     minimize    ½ z⁺ᵀ H z⁺
//!     subject to  r(z) + ∂r(z) (z⁺ − z) = 0,   (I_n ⊗ τ(0))ᵀ η_x⁺ = x₀,   G z⁺ ≤ h
//! ```
//!
//! where `½ zᵀHz` is the exact infinite-horizon quadratic cost and the
//! inequality rows are the same as in the linear case. Steps are globalized
//! with backtracking on the ℓ1 merit `½ zᵀHz + μ (‖c(z)‖₁ + ‖(Gz − h)⁺‖₁)`.

use alloc::vec::Vec;

use super::{cross_gram, GalerkinEval, NonlinearPlant, DEFAULT_K_TRUNC};
use crate::admissible::{stacked_constraints, AffineConstraintSet};
use crate::basis::{BasisFamily, ParamVector};
use crate::linalg::{self, kron};
use crate::qp::{solve_lp, QpProblem, QpSolver, QpStatus, Tolerances};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    /// Iteration budget.
    pub max_iter: usize,
    /// Relative tolerance on the step and on the constraint violation.
    pub tol: f64,
    /// `μ ← max(μ, penalty_factor · max|λ_eq|)`.
    pub penalty_factor: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// When a QP subproblem is infeasible, relax the state-only rows by the
    /// smallest uniform amount that restores feasibility instead of stopping
    /// with [`NlpStatus::QpInfeasible`].
    pub restore: bool,
    pub qp: Tolerances,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            penalty_factor: 10.0,
            backtrack: 0.5,
            max_backtracks: 20,
            armijo: 1e-4,
            restore: false,
            qp: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStatus {
    Converged,
    /// Budget exhausted; the last accepted iterate is returned.
    MaxIter,
    /// A QP subproblem had no solution, even after relaxing the state rows
    /// when that is enabled; the iterate it was built at is returned.
    QpInfeasible,
    /// No step length passed the merit test.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpStepResult {
    pub eta_x: ParamVector,
    pub eta_u: ParamVector,
    pub u0: Vector,
    /// ℓ1 merit at the returned iterate, with the final penalty.
    pub merit: f64,
    /// Quadratic cost `½ zᵀHz` at the returned iterate.
    pub cost: f64,
    pub iterations: usize,
    /// `max(min(‖∇L‖∞, ‖last step‖∞), ‖violation‖∞)`, with the Lagrangian
    /// gradient taken at the returned iterate and the last QP multipliers.
    pub kkt_residual: f64,
    /// `‖r(z)‖∞` at the returned iterate.
    pub residual: f64,
    pub status: NlpStatus,
    /// Iterations whose QP needed relaxed state constraints.
    pub restorations: usize,
    /// Working set of the last QP subproblem.
    pub active_set: Vec<usize>,
    /// One entry per accepted step.
    pub merit_history: Vec<MeritStep>,
}

/// Merit before and after an accepted step, under the penalty used for the
/// acceptance test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritStep {
    pub penalty: f64,
    pub before: f64,
    pub after: f64,
    pub alpha: f64,
}

impl NlpStepResult {
    pub fn converged(&self) -> bool {
        self.status == NlpStatus::Converged
    }
}

/// Plant, basis, quadratic cost `xᵀQx + uᵀRu` and affine constraints, with the
/// iterate-independent pieces of the SQP subproblem cached.
#[derive(Debug, Clone)]
pub struct NlpProblem<P> {
    plant: P,
    family: BasisFamily,
    q: Matrix,
    r: Matrix,
    cons: AffineConstraintSet,
    nmax: usize,
    k_trunc: usize,
    table: Matrix,
    cross: Matrix,
    h: Matrix,
    ain: Matrix,
    bin: Vector,
}

impl<P: NonlinearPlant> NlpProblem<P> {
    pub fn new(plant: P, family: BasisFamily, q: Matrix, r: Matrix, cons: AffineConstraintSet, nmax: usize) -> Result<Self> {
        Self::with_truncation(plant, family, q, r, cons, nmax, DEFAULT_K_TRUNC)
    }

    pub fn with_truncation(plant: P, family: BasisFamily, q: Matrix, r: Matrix, cons: AffineConstraintSet, nmax: usize, k_trunc: usize) -> Result<Self> {
        let n = plant.num_states();
        let m = plant.num_inputs();
        if q.shape() != (n, n) {
            return Err(Error::dim("Q", n, q.nrows()));
        }
        if r.shape() != (m, m) {
            return Err(Error::dim("R", m, r.nrows()));
        }
        if cons.num_states() != n || cons.num_inputs() != m {
            return Err(Error::dim("constraint columns", n + m, cons.num_states() + cons.num_inputs()));
        }
        if k_trunc < nmax {
            return Err(Error::InvalidArgument("truncation shorter than the constraint horizon".into()));
        }
        let j = family.gram()?.into_matrix();
        let h = linalg::block_diag(&[&kron(&q, &j), &kron(&r, &j)]) * 2.0;
        let h = (&h + h.transpose()) * 0.5;
        let (ain, bin) = stacked_constraints(&family, &cons, nmax + 1);
        let table = family.tau_table(k_trunc + 2);
        let cross = cross_gram(&table);
        Ok(Self {
            plant,
            family,
            q,
            r,
            cons,
            nmax,
            k_trunc,
            table,
            cross,
            h,
            ain,
            bin,
        })
    }

    pub fn plant(&self) -> &P {
        &self.plant
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn constraints(&self) -> &AffineConstraintSet {
        &self.cons
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn k_trunc(&self) -> usize {
        self.k_trunc
    }

    /// `ρ(M)^K`, the relative size of the neglected tail. Values above `1e-8`
    /// mean the truncation is too short for the basis.
    pub fn truncation_tail(&self) -> f64 {
        libm::pow(self.family.spectral_radius(), self.k_trunc as f64)
    }

    /// `½ zᵀHz`, the infinite-horizon cost of the parametrized trajectories.
    pub fn cost(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z))
    }

    fn eval(&self) -> GalerkinEval<'_> {
        GalerkinEval {
            table: &self.table,
            cross: &self.cross,
        }
    }

    fn split(&self, z: &Vector) -> (Vector, Vector) {
        let ns = self.plant.num_states() * self.family.dim();
        (z.rows(0, ns).into_owned(), z.rows(ns, z.len() - ns).into_owned())
    }

    /// Galerkin residual at the stacked iterate `z = (η_x, η_u)`.
    pub fn residual(&self, z: &Vector) -> Result<Vector> {
        let (ex, eu) = self.split(z);
        Ok(self.eval().run(&self.plant, &ex, &eu, false)?.0)
    }

    /// Inequality bounds for the initial state `x0`. Rows at `k = 0` that
    /// involve only the state carry no decision, since `x̃(0) = x0` is
    /// imposed; their bounds are relaxed to hold at `x0` so that a measured
    /// state outside the constraint set does not make the problem infeasible.
    pub fn bounds_at(&self, x0: &Vector) -> Vector {
        let mut bin = self.bin.clone();
        let cx = self.cons.cx();
        let cu = self.cons.cu();
        for i in 0..self.cons.num_constraints() {
            if cu.row(i).iter().all(|&v| v == 0.0) {
                bin[i] = bin[i].max(cx.row(i).dot(&x0.transpose()));
            }
        }
        bin
    }

    fn initial_rows(&self) -> Matrix {
        let n = self.plant.num_states();
        let s = self.family.dim();
        let mut c0 = Matrix::zeros(n, self.h.nrows());
        for i in 0..n {
            for l in 0..s {
                c0[(i, i * s + l)] = self.family.tau0()[l];
            }
        }
        c0
    }
}

fn l1(v: &Vector) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

struct Point {
    z: Vector,
    r: Vector,
    /// Equality violation `(r, C0 z − x0)` and positive part of `Gz − h`.
    viol: f64,
    viol_inf: f64,
    cost: f64,
}

impl Point {
    fn new<P: NonlinearPlant>(p: &NlpProblem<P>, c0: &Matrix, x0: &Vector, bin: &Vector, z: Vector) -> Result<Self> {
        let r = p.residual(&z)?;
        let init = c0 * &z - x0;
        let ineq = (&p.ain * &z - bin).map(|v| v.max(0.0));
        let viol = l1(&r) + l1(&init) + l1(&ineq);
        let viol_inf = linalg::max_abs(&r).max(linalg::max_abs(&init)).max(linalg::max_abs(&ineq));
        let cost = p.cost(&z);
        Ok(Self { z, r, viol, viol_inf, cost })
    }

    fn merit(&self, mu: f64) -> f64 {
        self.cost + mu * self.viol
    }
}

/// Rows of the stacked inequalities that involve only the state.
fn state_rows<P: NonlinearPlant>(problem: &NlpProblem<P>, rows: usize) -> Vec<bool> {
    let nc = problem.cons.num_constraints();
    let cu = problem.cons.cu();
    (0..rows).map(|r| cu.row(r % nc).iter().all(|&v| v == 0.0)).collect()
}

/// Smallest `δ ≥ 0` such that the QP becomes feasible when every state-only
/// row is relaxed to `h + δ`, from the LP `min δ`.
fn minimal_relaxation<P: NonlinearPlant>(problem: &NlpProblem<P>, qp: &QpProblem, tol: &Tolerances) -> Result<Option<f64>> {
    let nv = qp.num_vars();
    let rows = qp.ain.nrows();
    let soft = state_rows(problem, rows);
    let mut f = Vector::zeros(nv + 1);
    f[nv] = 1.0;
    let mut aeq = Matrix::zeros(qp.aeq.nrows(), nv + 1);
    aeq.view_mut((0, 0), qp.aeq.shape()).copy_from(&qp.aeq);
    let mut ain = Matrix::zeros(rows + 1, nv + 1);
    ain.view_mut((0, 0), (rows, nv)).copy_from(&qp.ain);
    let mut bin = Vector::zeros(rows + 1);
    bin.rows_mut(0, rows).copy_from(&qp.bin);
    for (r, &is_soft) in soft.iter().enumerate() {
        if is_soft {
            ain[(r, nv)] = -1.0;
        }
    }
    ain[(rows, nv)] = -1.0;
    let sol = solve_lp(&f, &aeq, &qp.beq, &ain, &bin, tol)?;
    Ok((sol.status == QpStatus::Optimal).then(|| sol.z[nv].max(0.0)))
}

/// Runs SQP from `(guess_x, guess_u)`, seeding the first QP working set with `warm`.
pub fn solve_nlp<P: NonlinearPlant>(
    problem: &NlpProblem<P>,
    x0: &Vector,
    guess_x: &ParamVector,
    guess_u: &ParamVector,
    warm: &[usize],
    opts: &SqpOptions,
) -> Result<NlpStepResult> {
    let n = problem.plant.num_states();
    let m = problem.plant.num_inputs();
    let s = problem.family.dim();
    if x0.len() != n {
        return Err(Error::dim("initial state", n, x0.len()));
    }
    if let Some(i) = (0..n).find(|&i| !x0[i].is_finite()) {
        return Err(Error::NonFinite { k: i, what: "initial state" });
    }
    if guess_x.as_vector().len() != n * s || guess_u.as_vector().len() != m * s {
        return Err(Error::dim("initial guess", (n + m) * s, guess_x.as_vector().len() + guess_u.as_vector().len()));
    }
    let nv = (n + m) * s;
    let mut z0 = Vector::zeros(nv);
    z0.rows_mut(0, n * s).copy_from(guess_x.as_vector());
    z0.rows_mut(n * s, m * s).copy_from(guess_u.as_vector());

    let c0 = problem.initial_rows();
    let scale = 1.0 + linalg::max_abs(x0);
    let bin = problem.bounds_at(x0);
    let mut cur = Point::new(problem, &c0, x0, &bin, z0)?;
    let mut mu = 1.0f64;
    let mut working: Vec<usize> = warm.to_vec();
    let mut history = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut multipliers: Option<(Vector, Vector)> = None;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    let mut restorations = 0;
    let status;

    loop {
        let (ex, eu) = problem.split(&cur.z);
        let (r, jacs) = problem.eval().run(&problem.plant, &ex, &eu, true)?;
        let (jx, ju) = jacs.expect("requested Jacobians");
        let mut aeq = Matrix::zeros(n * s + n, nv);
        aeq.view_mut((0, 0), (n * s, n * s)).copy_from(&jx);
        aeq.view_mut((0, n * s), (n * s, m * s)).copy_from(&ju);
        aeq.view_mut((n * s, 0), (n, nv)).copy_from(&c0);

        // KKT test at the current iterate with the latest QP multipliers
        let grad = &problem.h * &cur.z;
        if let Some((leq, lin)) = &multipliers {
            let g = &grad + aeq.tr_mul(leq) + problem.ain.tr_mul(lin);
            stationarity = linalg::max_abs(&g);
        }
        let feasible = cur.viol_inf <= opts.tol * scale;
        let zscale = 1.0 + linalg::max_abs(&cur.z);
        let gscale = 1.0 + linalg::max_abs(&grad);
        if feasible && (stationarity <= opts.tol * gscale || last_step <= opts.tol * zscale) {
            status = NlpStatus::Converged;
            break;
        }
        if iterations >= opts.max_iter {
            status = NlpStatus::MaxIter;
            break;
        }
        iterations += 1;

        let mut beq = Vector::zeros(n * s + n);
        let lin = aeq.rows(0, n * s) * &cur.z - &r;
        beq.rows_mut(0, n * s).copy_from(&lin);
        beq.rows_mut(n * s, n).copy_from(x0);
        let qp = QpProblem::new(problem.h.clone(), Vector::zeros(nv), aeq, beq.clone(), problem.ain.clone(), bin.clone())?;
        let mut sol = QpSolver::new(&qp, opts.qp)?.solve(&beq, &working)?;
        // linearized violation left by the step (nonzero only after a relaxation)
        let mut lin_viol = 0.0;
        if sol.status != QpStatus::Optimal && opts.restore {
            if let Some(delta) = minimal_relaxation(problem, &qp, &opts.qp)? {
                let soft = state_rows(problem, qp.ain.nrows());
                let margin = delta * (1.0 + 1e-6) + opts.qp.primal * (1.0 + delta);
                let mut relaxed = bin.clone();
                for (r, &is_soft) in soft.iter().enumerate() {
                    if is_soft {
                        relaxed[r] += margin;
                    }
                }
                let rq = QpProblem::new(qp.h.clone(), qp.f.clone(), qp.aeq.clone(), qp.beq.clone(), qp.ain.clone(), relaxed)?;
                let rs = QpSolver::new(&rq, opts.qp)?.solve(&rq.beq, &working)?;
                if rs.status == QpStatus::Optimal {
                    let excess = &qp.ain * &rs.z - &bin;
                    lin_viol = excess.iter().map(|v| v.max(0.0)).sum();
                    sol = rs;
                    restorations += 1;
                }
            }
        }
        if sol.status != QpStatus::Optimal {
            status = NlpStatus::QpInfeasible;
            break;
        }
        working = sol.active_set.clone();
        let d = &sol.z - &cur.z;
        mu = mu.max(opts.penalty_factor * linalg::max_abs(&sol.eq_multipliers));

        let phi0 = cur.merit(mu);
        let slope = grad.dot(&d) - mu * (cur.viol - lin_viol);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = Point::new(problem, &c0, x0, &bin, &cur.z + &d * alpha)?;
            if trial.merit(mu) <= phi0 + opts.armijo * alpha * slope.min(0.0) {
                accepted = Some(trial);
                break;
            }
            alpha *= opts.backtrack;
        }
        let Some(next) = accepted else {
            status = NlpStatus::LineSearchFailed;
            break;
        };
        last_step = alpha * linalg::max_abs(&d);
        // multipliers describe the full step only
        multipliers = (alpha == 1.0).then(|| (sol.eq_multipliers.clone(), sol.in_multipliers.clone()));
        if multipliers.is_none() {
            stationarity = f64::INFINITY;
        }
        history.push(MeritStep {
            penalty: mu,
            before: phi0,
            after: next.merit(mu),
            alpha,
        });
        cur = next;
    }

    let eta_x = ParamVector::new(cur.z.rows(0, n * s).into_owned(), n)?;
    let eta_u = ParamVector::new(cur.z.rows(n * s, m * s).into_owned(), m)?;
    let u0 = problem.family.eval(&eta_u, 0)?;
    Ok(NlpStepResult {
        eta_x,
        eta_u,
        u0,
        merit: cur.merit(mu),
        cost: cur.cost,
        iterations,
        kkt_residual: stationarity.min(last_step).max(cur.viol_inf),
        residual: linalg::max_abs(&cur.r),
        status,
        restorations,
        active_set: working,
        merit_history: history,
    })
}

/// Receding-horizon controller. The first step needs an initial guess; later
/// steps start from the previous solution shifted by one sample.
#[derive(Debug, Clone)]
pub struct NonlinearController<P> {
    problem: NlpProblem<P>,
    cold: SqpOptions,
    warm_budget: usize,
    prev: Option<(ParamVector, ParamVector, Vec<usize>)>,
}

impl<P: NonlinearPlant> NonlinearController<P> {
    /// `warm_budget` caps the SQP iterations of warm-started steps.
    pub fn new(problem: NlpProblem<P>, cold: SqpOptions, warm_budget: usize) -> Self {
        Self {
            problem,
            cold,
            warm_budget,
            prev: None,
        }
    }

    pub fn problem(&self) -> &NlpProblem<P> {
        &self.problem
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    pub fn is_warm(&self) -> bool {
        self.prev.is_some()
    }

    /// Solves from `x0`. `guess` is used when there is no previous solution
    /// and is otherwise ignored.
    pub fn step(&mut self, x0: &Vector, guess: Option<(&ParamVector, &ParamVector)>) -> Result<NlpStepResult> {
        let family = &self.problem.family;
        let result = match self.prev.take() {
            Some((ex, eu, active)) => {
                let gx = family.shift(&ex)?;
                let gu = family.shift(&eu)?;
                let nc = self.problem.cons.num_constraints();
                let warm: Vec<usize> = active.into_iter().filter(|&r| r >= nc).map(|r| r - nc).collect();
                let opts = SqpOptions {
                    max_iter: self.warm_budget,
                    ..self.cold
                };
                solve_nlp(&self.problem, x0, &gx, &gu, &warm, &opts)?
            }
            None => {
                let (gx, gu) = guess.ok_or(Error::InvalidArgument("cold start needs an initial guess".into()))?;
                solve_nlp(&self.problem, x0, gx, gu, &[], &self.cold)?
            }
        };
        self.prev = Some((result.eta_x.clone(), result.eta_u.clone(), result.active_set.clone()));
        Ok(result)
    }
}
