//! Nonlinear plants with Galerkin-encoded dynamics.
//!
//! For a discrete-time plant `x(k+1) = f(k, x(k), u(k))` the infinitely many
//! dynamic equations are replaced by their projection onto the basis span,
//!
//! ```text
//!     r(η_x, η_u) = Σ_{k=0}^{K} (I_n ⊗ τ(k)) (x̃(k+1) − f(k, x̃(k), ũ(k))) = 0,
//! ```
//!
//! truncated at `K`. For a linear plant this reduces to the equality
//! constraint used by [`crate::lti`], premultiplied by `I_n ⊗ J̄`.

mod dual;
mod pendulum;
mod sqp;

pub use dual::{Dual, Real};
pub use pendulum::{swing_up_guess, CartPendulum, GuessOptions, GuessTrajectory, PendulumParams};
pub use sqp::{solve_nlp, MeritStep, NlpProblem, NlpStatus, NlpStepResult, NonlinearController, SqpOptions};

use crate::basis::{BasisFamily, ParamVector};
use crate::lti::LtiProblem;
use crate::{Error, Matrix, Result, Vector};

/// Truncation length of the Galerkin sums unless configured otherwise.
pub const DEFAULT_K_TRUNC: usize = 150;

/// Discrete-time plant with the regulated equilibrium at the origin.
pub trait NonlinearPlant {
    fn num_states(&self) -> usize;
    fn num_inputs(&self) -> usize;

    /// `f(k, x, u)`.
    fn step(&self, k: usize, x: &Vector, u: &Vector) -> Vector;

    /// `(f, ∂f/∂x, ∂f/∂u)` at `(x, u)`. Defaults to central differences.
    fn linearize(&self, k: usize, x: &Vector, u: &Vector) -> (Vector, Matrix, Matrix) {
        let (a, b) = finite_difference_jacobian(self, k, x, u, 1e-6);
        (self.step(k, x, u), a, b)
    }
}

/// Central-difference Jacobians with step `h·(1 + |xⱼ|)`.
pub fn finite_difference_jacobian<P: NonlinearPlant + ?Sized>(plant: &P, k: usize, x: &Vector, u: &Vector, h: f64) -> (Matrix, Matrix) {
    let n = plant.num_states();
    let m = plant.num_inputs();
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, m);
    for j in 0..n {
        let dj = h * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += dj;
        xm[j] -= dj;
        let col = (plant.step(k, &xp, u) - plant.step(k, &xm, u)) / (2.0 * dj);
        a.set_column(j, &col);
    }
    for j in 0..m {
        let dj = h * (1.0 + u[j].abs());
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += dj;
        um[j] -= dj;
        let col = (plant.step(k, x, &up) - plant.step(k, x, &um)) / (2.0 * dj);
        b.set_column(j, &col);
    }
    (a, b)
}

impl NonlinearPlant for LtiProblem {
    fn num_states(&self) -> usize {
        self.a.nrows()
    }

    fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, _k: usize, x: &Vector, u: &Vector) -> Vector {
        self.next_state(x, u)
    }

    fn linearize(&self, _k: usize, x: &Vector, u: &Vector) -> (Vector, Matrix, Matrix) {
        (self.next_state(x, u), self.a.clone(), self.b.clone())
    }
}

/// Galerkin sums over a precomputed table of `τ(0), …, τ(K+1)`.
pub(crate) struct GalerkinEval<'a> {
    pub table: &'a Matrix,
    /// `Σ_{k≤K} τ(k) τ(k+1)ᵀ`.
    pub cross: &'a Matrix,
}

impl GalerkinEval<'_> {
    fn horizon(&self) -> usize {
        self.table.ncols() - 1
    }

    /// Residual and, if `jac`, the Jacobians with respect to `η_x` and `η_u`.
    pub fn run<P: NonlinearPlant + ?Sized>(&self, plant: &P, eta_x: &Vector, eta_u: &Vector, jac: bool) -> Result<(Vector, Option<(Matrix, Matrix)>)> {
        let n = plant.num_states();
        let m = plant.num_inputs();
        let s = self.table.nrows();
        let ex = Matrix::from_column_slice(s, n, eta_x.as_slice()).transpose();
        let eu = Matrix::from_column_slice(s, m, eta_u.as_slice()).transpose();
        let xs = &ex * self.table;
        let us = &eu * self.table;
        let mut r = Vector::zeros(n * s);
        let mut jacs = jac.then(|| {
            let mut jx = Matrix::zeros(n * s, n * s);
            for i in 0..n {
                jx.view_mut((i * s, i * s), (s, s)).copy_from(self.cross);
            }
            (jx, Matrix::zeros(n * s, m * s))
        });
        for k in 0..self.horizon() {
            let xk = xs.column(k).into_owned();
            let uk = us.column(k).into_owned();
            let (fx, a, b) = if jac {
                plant.linearize(k, &xk, &uk)
            } else {
                (plant.step(k, &xk, &uk), Matrix::zeros(0, 0), Matrix::zeros(0, 0))
            };
            if fx.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { k, what: "plant output" });
            }
            let tau = self.table.column(k);
            for i in 0..n {
                let e = xs[(i, k + 1)] - fx[i];
                r.rows_mut(i * s, s).axpy(e, &tau, 1.0);
            }
            if let Some((jx, ju)) = jacs.as_mut() {
                if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { k, what: "plant Jacobian" });
                }
                let outer = tau * tau.transpose();
                for i in 0..n {
                    for j in 0..n {
                        let c = a[(i, j)];
                        if c != 0.0 {
                            let mut blk = jx.view_mut((i * s, j * s), (s, s));
                            blk -= &outer * c;
                        }
                    }
                    for j in 0..m {
                        let c = b[(i, j)];
                        if c != 0.0 {
                            let mut blk = ju.view_mut((i * s, j * s), (s, s));
                            blk -= &outer * c;
                        }
                    }
                }
            }
        }
        Ok((r, jacs))
    }
}

pub(crate) fn cross_gram(table: &Matrix) -> Matrix {
    let k = table.ncols() - 1;
    table.columns(0, k) * table.columns(1, k).transpose()
}

fn check_dims<P: NonlinearPlant + ?Sized>(plant: &P, family: &BasisFamily, eta_x: &ParamVector, eta_u: &ParamVector) -> Result<()> {
    let s = family.dim();
    if eta_x.channels() != plant.num_states() || eta_x.basis_dim() != s {
        return Err(Error::dim("state parameters", plant.num_states() * s, eta_x.as_vector().len()));
    }
    if eta_u.channels() != plant.num_inputs() || eta_u.basis_dim() != s {
        return Err(Error::dim("input parameters", plant.num_inputs() * s, eta_u.as_vector().len()));
    }
    Ok(())
}

/// The truncated Galerkin residual, an `n·s` vector laid out channel by channel.
pub fn galerkin_residual<P: NonlinearPlant + ?Sized>(plant: &P, family: &BasisFamily, eta_x: &ParamVector, eta_u: &ParamVector, k_trunc: usize) -> Result<Vector> {
    check_dims(plant, family, eta_x, eta_u)?;
    let table = family.tau_table(k_trunc + 2);
    let cross = cross_gram(&table);
    let eval = GalerkinEval { table: &table, cross: &cross };
    Ok(eval.run(plant, eta_x.as_vector(), eta_u.as_vector(), false)?.0)
}

/// `(∂r/∂η_x, ∂r/∂η_u)` by the chain rule through the plant linearization.
pub fn residual_jacobian<P: NonlinearPlant + ?Sized>(plant: &P, family: &BasisFamily, eta_x: &ParamVector, eta_u: &ParamVector, k_trunc: usize) -> Result<(Matrix, Matrix)> {
    check_dims(plant, family, eta_x, eta_u)?;
    let table = family.tau_table(k_trunc + 2);
    let cross = cross_gram(&table);
    let eval = GalerkinEval { table: &table, cross: &cross };
    let (_, jacs) = eval.run(plant, eta_x.as_vector(), eta_u.as_vector(), true)?;
    Ok(jacs.expect("requested Jacobians"))
}

/// Least-squares coefficients of sampled signals, one column per sample:
/// `η_i = J̄⁻¹ Σ_k τ(k) s_i(k)`, with `J̄` the Gram matrix of the samples used.
/// For an orthonormal family and long records this is `Σ_k τ(k) s_i(k)`.
pub fn project_trajectory(samples: &Matrix, family: &BasisFamily) -> Result<ParamVector> {
    let (d, count) = samples.shape();
    if count == 0 {
        return Err(Error::InvalidArgument("empty sample list".into()));
    }
    let table = family.tau_table(count);
    let gram = &table * table.transpose();
    let rhs = &table * samples.transpose();
    let coeffs = gram
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("sampled Gram matrix"))?
        .solve(&rhs);
    ParamVector::new(Vector::from_column_slice(coeffs.as_slice()), d)
}
