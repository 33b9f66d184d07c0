//! Cart-pendulum driven by a DC motor through a belt.
//!
//! State `(x_c, ẋ_c, φ, φ̇)` with `φ = 0` upright, input the motor voltage.
//! The continuous model is discretized with one classical Runge–Kutta step
//! per sample; Jacobians are exact derivatives of that map, obtained with
//! dual numbers.

use alloc::vec::Vec;

use super::dual::{Dual, Real};
use super::{project_trajectory, NonlinearPlant};
use crate::basis::{BasisFamily, ParamVector};
use crate::linalg;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Pendulum mass (kg).
    pub m: f64,
    /// Lumped cart mass (kg).
    pub cart_mass: f64,
    /// Pendulum length (m).
    pub l: f64,
    /// Torque constant (Nm/A).
    pub k_m: f64,
    /// Speed constant (V/s).
    pub k_n: f64,
    /// Motor resistance (Ω).
    pub r_m: f64,
    /// Belt wheel radius (m).
    pub r_zr: f64,
    pub g: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 0.17,
            cart_mass: 0.74,
            l: 0.30,
            k_m: 0.011,
            k_n: 20.62,
            r_m: 0.30,
            r_zr: 0.018,
            g: 9.81,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.cart_mass, self.l, self.k_m, self.k_n, self.r_m, self.r_zr, self.g];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("pendulum parameters must be positive".into()))
        }
    }

    /// Force on the cart for voltage `u` at cart speed `v`.
    fn force<T: Real>(&self, u: T, v: T) -> T {
        let a = self.k_m / (self.r_zr * self.r_m);
        T::cst(a) * (u - v * T::cst(1.0 / (self.k_n * self.r_zr)))
    }

    /// Time derivative of the state.
    pub fn deriv<T: Real>(&self, x: [T; 4], u: T) -> [T; 4] {
        let (m, big_m, l, g) = (self.m, self.cart_mass, self.l, self.g);
        let f = self.force(u, x[1]);
        let (sp, cp) = (x[2].sin(), x[2].cos());
        let w2 = x[3] * x[3];
        let den = T::cst(big_m / m) + sp * sp;
        let xdd = (f * T::cst(1.0 / m) - T::cst(g) * sp * cp + T::cst(l) * w2 * sp) / den;
        let pdd = (-(f * T::cst(1.0 / (m * l))) * cp + T::cst((big_m + m) * g / (m * l)) * sp - w2 * sp * cp) / den;
        [x[1], xdd, x[3], pdd]
    }

    /// `(A_c, B_c)` of the upright linearization, in closed form.
    pub fn upright_linearization(&self) -> (Matrix, Matrix) {
        let (m, big_m, l, g) = (self.m, self.cart_mass, self.l, self.g);
        let a = self.k_m / (self.r_zr * self.r_m);
        let damp = a / (self.k_n * self.r_zr);
        let ac = Matrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0,
                0.0, -damp / big_m, -m * g / big_m, 0.0,
                0.0, 0.0, 0.0, 1.0,
                0.0, damp / (big_m * l), (big_m + m) * g / (big_m * l), 0.0,
            ],
        );
        let bc = Matrix::from_column_slice(4, 1, &[0.0, a / big_m, 0.0, -a / (big_m * l)]);
        (ac, bc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPendulum {
    pub params: PendulumParams,
    pub ts: f64,
}

impl CartPendulum {
    pub fn new(params: PendulumParams, ts: f64) -> Result<Self> {
        params.validate()?;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::InvalidArgument("sampling time must be positive".into()));
        }
        Ok(Self { params, ts })
    }

    /// One RK4 step.
    pub fn rk4<T: Real>(&self, x: [T; 4], u: T) -> [T; 4] {
        let h = T::cst(self.ts);
        let half = T::cst(0.5 * self.ts);
        let add = |a: [T; 4], k: [T; 4], c: T| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2], a[3] + c * k[3]];
        let k1 = self.params.deriv(x, u);
        let k2 = self.params.deriv(add(x, k1, half), u);
        let k3 = self.params.deriv(add(x, k2, half), u);
        let k4 = self.params.deriv(add(x, k3, h), u);
        let sixth = T::cst(self.ts / 6.0);
        let two = T::cst(2.0);
        let mut out = x;
        for i in 0..4 {
            out[i] = x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        out
    }

    /// The hanging rest state.
    pub fn hanging() -> Vector {
        Vector::from_vec(alloc::vec![0.0, 0.0, core::f64::consts::PI, 0.0])
    }
}

fn arr(x: &Vector) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

impl NonlinearPlant for CartPendulum {
    fn num_states(&self) -> usize {
        4
    }

    fn num_inputs(&self) -> usize {
        1
    }

    fn step(&self, _k: usize, x: &Vector, u: &Vector) -> Vector {
        Vector::from_column_slice(&self.rk4(arr(x), u[0]))
    }

    fn linearize(&self, _k: usize, x: &Vector, u: &Vector) -> (Vector, Matrix, Matrix) {
        let xd: [Dual<5>; 4] = core::array::from_fn(|i| Dual::var(x[i], i));
        let next = self.rk4(xd, Dual::var(u[0], 4));
        let f = Vector::from_fn(4, |i, _| next[i].v);
        let a = Matrix::from_fn(4, 4, |i, j| next[i].d[j]);
        let b = Matrix::from_fn(4, 1, |i, _| next[i].d[4]);
        (f, a, b)
    }
}

/// Search space of the open-loop swing-up guess: up to three saturated
/// pulses of alternating sign, followed by a saturated LQR once the pendulum
/// enters the catch region around the upright position.
#[derive(Debug, Clone, PartialEq)]
pub struct GuessOptions {
    pub horizon: usize,
    pub u_max: f64,
    /// Longest pulse, in samples.
    pub max_pulse: usize,
    /// `|φ|` below which the LQR takes over (rad).
    pub catch_angle: f64,
    pub q: Matrix,
    pub r: Matrix,
}

impl Default for GuessOptions {
    fn default() -> Self {
        Self {
            horizon: 150,
            u_max: 24.0,
            max_pulse: 15,
            catch_angle: 0.5,
            q: Matrix::from_diagonal(&Vector::from_vec(alloc::vec![20.0, 2.0, 50.0, 2.0])),
            r: Matrix::from_element(1, 1, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuessTrajectory {
    /// Signed pulse lengths in samples.
    pub pulses: [i32; 3],
    /// Input samples `û(0..horizon)`, as a `1 × horizon` matrix.
    pub inputs: Matrix,
    /// State samples `x̂(0..horizon)`, as a `4 × horizon` matrix.
    pub states: Matrix,
    /// `Σ l(x̂, û)` with the LQR weights.
    pub cost: f64,
}

impl GuessTrajectory {
    /// Basis coefficients `(η_x, η_u)` of the sampled trajectories.
    pub fn project(&self, family: &BasisFamily) -> Result<(ParamVector, ParamVector)> {
        Ok((project_trajectory(&self.states, family)?, project_trajectory(&self.inputs, family)?))
    }
}

fn simulate(plant: &CartPendulum, x0: &Vector, pulses: [i32; 3], k_lqr: &Matrix, opts: &GuessOptions) -> Option<GuessTrajectory> {
    let n = opts.horizon;
    let mut states = Matrix::zeros(4, n);
    let mut inputs = Matrix::zeros(1, n);
    let mut x = arr(x0);
    let mut caught = false;
    let mut cost = 0.0;
    // sample index at which each pulse ends
    let mut ends = [0usize; 3];
    let mut acc = 0;
    for (e, p) in ends.iter_mut().zip(pulses) {
        acc += p.unsigned_abs() as usize;
        *e = acc;
    }
    for k in 0..n {
        caught |= x[2].abs() < opts.catch_angle;
        let u = if caught {
            let xv = Vector::from_column_slice(&x);
            (k_lqr * xv)[0].clamp(-opts.u_max, opts.u_max)
        } else if let Some(i) = ends.iter().position(|&e| k < e) {
            f64::from(pulses[i].signum()) * opts.u_max
        } else {
            0.0
        };
        states.set_column(k, &Vector::from_column_slice(&x));
        inputs[(0, k)] = u;
        let xv = Vector::from_column_slice(&x);
        cost += xv.dot(&(&opts.q * &xv)) + opts.r[(0, 0)] * u * u;
        x = plant.rk4(x, u);
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let settled = x[0].abs() < 0.1 && x[1].abs() < 0.5 && x[2].abs() < 0.05 && x[3].abs() < 0.5;
    settled.then_some(GuessTrajectory {
        pulses,
        inputs,
        states,
        cost,
    })
}

/// Cheapest settled trajectory over the pulse grid, with the rail constraint
/// ignored. Pulses alternate in sign; zero-length pulses are allowed.
pub fn swing_up_guess(plant: &CartPendulum, x0: &Vector, opts: &GuessOptions) -> Result<GuessTrajectory> {
    if x0.len() != 4 {
        return Err(Error::dim("initial state", 4, x0.len()));
    }
    let lin = plant.linearize(0, &Vector::zeros(4), &Vector::zeros(1));
    let (_, k_lqr) = linalg::dare(&lin.1, &lin.2, &opts.q, &opts.r)?;
    let mut best: Option<GuessTrajectory> = None;
    let len = opts.max_pulse as i32;
    let mut candidates = Vec::new();
    for sign in [1i32, -1] {
        for a in 1..=len {
            for b in 0..=len {
                for c in 0..=len {
                    candidates.push([sign * a, -sign * b, sign * c]);
                }
            }
        }
    }
    for pulses in candidates {
        if let Some(t) = simulate(plant, x0, pulses, &k_lqr, opts) {
            if best.as_ref().is_none_or(|b| t.cost < b.cost) {
                best = Some(t);
            }
        }
    }
    best.ok_or(Error::NoConvergence("swing-up guess search"))
}
