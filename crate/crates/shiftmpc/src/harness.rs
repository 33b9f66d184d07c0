//! Closed-loop simulation with disturbance injection and runtime monitors.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use shiftmpc_core::admissible::AffineConstraintSet;
use shiftmpc_core::basis::ParamVector;
use shiftmpc_core::lti::LtiController;
use shiftmpc_core::nonlinear::{NlpStatus, NonlinearController, NonlinearPlant};
use shiftmpc_core::{Matrix, QpStatus, Vector};

/// What one controller call hands back to the loop.
#[derive(Debug, Clone)]
pub struct ControlAction {
    pub u: Vector,
    /// `J(x)`, the planned cost from the current state.
    pub cost: f64,
    pub feasible: bool,
    pub converged: bool,
    pub iterations: usize,
    pub status: &'static str,
    pub eta_x: ParamVector,
    pub eta_u: ParamVector,
}

pub trait Controller {
    fn step(&mut self, x: &Vector) -> shiftmpc_core::Result<ControlAction>;
    fn stage_cost(&self, x: &Vector, u: &Vector) -> f64;
    fn constraints(&self) -> &AffineConstraintSet;
}

pub struct LtiMpc(pub LtiController);

impl Controller for LtiMpc {
    fn step(&mut self, x: &Vector) -> shiftmpc_core::Result<ControlAction> {
        let r = self.0.step(x)?;
        let feasible = r.is_optimal();
        Ok(ControlAction {
            u: r.u0,
            cost: r.cost,
            feasible,
            converged: feasible,
            iterations: r.iterations,
            status: qp_status_name(r.status),
            eta_x: r.eta_x,
            eta_u: r.eta_u,
        })
    }

    fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        self.0.problem().stage_cost(x, u)
    }

    fn constraints(&self) -> &AffineConstraintSet {
        &self.0.problem().cons
    }
}

pub fn qp_status_name(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::Unbounded => "unbounded",
        QpStatus::MaxIter => "max_iter",
        QpStatus::Inaccurate => "inaccurate",
    }
}

/// SQP controller with the projected initial guess for its first solve.
pub struct NonlinearMpc<P> {
    pub inner: NonlinearController<P>,
    pub guess: (ParamVector, ParamVector),
}

impl<P: NonlinearPlant> Controller for NonlinearMpc<P> {
    fn step(&mut self, x: &Vector) -> shiftmpc_core::Result<ControlAction> {
        let r = self.inner.step(x, Some((&self.guess.0, &self.guess.1)))?;
        let status = match r.status {
            NlpStatus::Converged => "converged",
            NlpStatus::MaxIter => "max_iter",
            NlpStatus::QpInfeasible => "qp_infeasible",
            NlpStatus::LineSearchFailed => "line_search_failed",
        };
        Ok(ControlAction {
            converged: r.converged(),
            feasible: r.status != NlpStatus::QpInfeasible,
            u: r.u0,
            cost: r.cost,
            iterations: r.iterations,
            status,
            eta_x: r.eta_x,
            eta_u: r.eta_u,
        })
    }

    fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        let p = self.inner.problem();
        x.dot(&(p.q() * x)) + u.dot(&(p.r() * u))
    }

    fn constraints(&self) -> &AffineConstraintSet {
        self.inner.problem().constraints()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    /// One scalar `n(k)` multiplies the whole scale vector.
    Common,
    /// Independent draws per state.
    PerState,
}

/// `x(k+1) = f(x(k), u(k)) + scale ∘ n(k)` with `n(k)` uniform on `[−n_max, n_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub scale: Vec<f64>,
    pub n_max: f64,
    pub mode: DisturbanceMode,
    pub seed: u64,
}

/// `u32` words reserved per step in the ChaCha stream.
pub const WORDS_PER_STEP: u128 = 64;

/// Experiment tags in the high half of the stream id.
pub mod streams {
    pub const INITIAL_STATES: u64 = 1;
    pub const DISTURBANCE: u64 = 2;

    /// `(experiment << 32) | index`.
    pub fn id(experiment: u64, index: u64) -> u64 {
        (experiment << 32) | (index & 0xffff_ffff)
    }
}

/// ChaCha8 keyed by the seed and positioned at `(stream, word)`. Any draw can
/// be regenerated without replaying the ones before it.
pub fn rng_at(seed: u64, stream: u64, word: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word);
    rng
}

impl DisturbanceSpec {
    /// `(0.02 m, 0.005 m/s, 1°, 0.5°/s)`.
    pub fn pendulum_scale() -> Vec<f64> {
        vec![0.02, 0.005, 1f64.to_radians(), 0.5f64.to_radians()]
    }

    /// `scale ∘ n(k)` for run `stream`.
    pub fn sample(&self, stream: u64, k: usize) -> Vector {
        let n = self.scale.len();
        if self.n_max == 0.0 {
            return Vector::zeros(n);
        }
        let mut rng = rng_at(self.seed, stream, k as u128 * WORDS_PER_STEP);
        let a = self.n_max;
        match self.mode {
            DisturbanceMode::Common => {
                let v: f64 = rng.random_range(-a..=a);
                Vector::from_fn(n, |i, _| self.scale[i] * v)
            }
            DisturbanceMode::PerState => Vector::from_fn(n, |i, _| self.scale[i] * rng.random_range(-a..=a)),
        }
    }
}

/// Uniform draws on `[−h, h]ⁿ`, one stream per state index.
pub fn draw_initial_states(seed: u64, count: usize, n: usize, half_width: f64) -> Vec<Vector> {
    (0..count)
        .map(|i| {
            let mut rng = rng_at(seed, streams::id(streams::INITIAL_STATES, i as u64), 0);
            Vector::from_fn(n, |_, _| rng.random_range(-half_width..half_width))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// End the run before applying anything.
    Stop,
    /// Apply the first input of whatever the solver returned.
    ApplyIterate,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub steps: usize,
    pub policy: InfeasiblePolicy,
    pub record_wall_time: bool,
    /// Keep `η_x, η_u` of every step for monitor recomputation.
    pub keep_eta: bool,
    pub lyapunov_tol: f64,
    /// `‖x(final)‖∞` below which the run counts as converged.
    pub converge_tol: f64,
}

impl RunOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            policy: InfeasiblePolicy::Stop,
            record_wall_time: false,
            keep_eta: false,
            lyapunov_tol: 1e-6,
            converge_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `J(x(k))`.
    pub cost_to_go: f64,
    /// `l(x(k), u(k))`.
    pub stage_cost: f64,
    pub feasible: bool,
    pub converged: bool,
    pub iterations: usize,
    pub status: &'static str,
    /// Largest `g(x(k), u(k))`; positive means violated.
    pub violation: f64,
    pub wall_time_us: Option<f64>,
    #[serde(skip)]
    pub eta: Option<(ParamVector, ParamVector)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovMonitor {
    /// Pairs of consecutive feasible steps checked.
    pub checked: usize,
    pub violations: usize,
    /// Largest `(J(k+1) − J(k) + l(k)) / (1 + J(k))`.
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub k: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps_run: usize,
    /// `Σ_k l(x(k), u(k))` over the applied inputs.
    pub total_cost: f64,
    pub converged: bool,
    pub max_violation: f64,
    pub infeasible_steps: usize,
    /// Feasible step followed by an infeasible one.
    pub feasibility_losses: usize,
    pub early_stop: Option<EarlyStop>,
    pub lyapunov: LyapunovMonitor,
    pub max_iterations: usize,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub records: Vec<StepRecord>,
    /// State after the last applied input.
    pub final_state: Vec<f64>,
    pub summary: RunSummary,
}

impl ClosedLoopLog {
    /// `x(0), …, x(steps_run)`.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.records.iter().map(|r| r.x.as_slice()).chain(std::iter::once(self.final_state.as_slice()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("non-finite state at step {k}: x = {state:?} after u = {input:?}")]
    NonFinite {
        k: usize,
        state: Vec<f64>,
        input: Vec<f64>,
        log: Box<ClosedLoopLog>,
    },
    #[error("controller failed at step {k}: {source}")]
    Controller {
        k: usize,
        #[source]
        source: shiftmpc_core::Error,
    },
    #[error("initial state has {found} entries, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Runs `opts.steps` receding-horizon steps from `x0`. The controller keeps its
/// own warm start between calls; the disturbance enters the plant only.
pub fn run_closed_loop<P, C>(
    plant: &P,
    ctrl: &mut C,
    x0: &Vector,
    opts: &RunOptions,
    disturbance: Option<(&DisturbanceSpec, u64)>,
) -> Result<ClosedLoopLog, HarnessError>
where
    P: NonlinearPlant + ?Sized,
    C: Controller + ?Sized,
{
    if x0.len() != plant.num_states() {
        return Err(HarnessError::Dimension {
            expected: plant.num_states(),
            found: x0.len(),
        });
    }
    let mut records: Vec<StepRecord> = Vec::with_capacity(opts.steps);
    let mut x = x0.clone();
    let mut early_stop = None;
    for k in 0..opts.steps {
        let t = opts.record_wall_time.then(Instant::now);
        let act = ctrl.step(&x).map_err(|source| HarnessError::Controller { k, source })?;
        let wall = t.map(|t| t.elapsed().as_secs_f64() * 1e6);
        if !act.feasible && opts.policy == InfeasiblePolicy::Stop {
            early_stop = Some(EarlyStop {
                k,
                status: act.status.to_string(),
            });
            break;
        }
        let l = ctrl.stage_cost(&x, &act.u);
        let violation = ctrl.constraints().max_violation(&x, &act.u);
        let mut next = plant.step(k, &x, &act.u);
        if let Some((d, stream)) = disturbance {
            next += d.sample(stream, k);
        }
        records.push(StepRecord {
            k,
            x: x.iter().copied().collect(),
            u: act.u.iter().copied().collect(),
            cost_to_go: act.cost,
            stage_cost: l,
            feasible: act.feasible,
            converged: act.converged,
            iterations: act.iterations,
            status: act.status,
            violation,
            wall_time_us: wall,
            eta: opts.keep_eta.then(|| (act.eta_x.clone(), act.eta_u.clone())),
        });
        if next.iter().any(|v| !v.is_finite()) {
            let log = finish(records, &x, None, opts);
            return Err(HarnessError::NonFinite {
                k,
                state: next.iter().copied().collect(),
                input: act.u.iter().copied().collect(),
                log: Box::new(log),
            });
        }
        x = next;
    }
    Ok(finish(records, &x, early_stop, opts))
}

fn finish(records: Vec<StepRecord>, x: &Vector, early_stop: Option<EarlyStop>, opts: &RunOptions) -> ClosedLoopLog {
    let total_cost = records.iter().fold(0.0, |acc, r| acc + r.stage_cost);
    let max_violation = records.iter().map(|r| r.violation).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let infeasible_steps = records.iter().filter(|r| !r.feasible).count() + usize::from(early_stop.is_some());
    let mut losses = records.windows(2).filter(|w| w[0].feasible && !w[1].feasible).count();
    if early_stop.is_some() && records.last().is_some_and(|r| r.feasible) {
        losses += 1;
    }
    let mut lyapunov = LyapunovMonitor {
        worst_margin: f64::NEG_INFINITY,
        ..LyapunovMonitor::default()
    };
    for w in records.windows(2) {
        if !(w[0].feasible && w[1].feasible) {
            continue;
        }
        let margin = (w[1].cost_to_go - w[0].cost_to_go + w[0].stage_cost) / (1.0 + w[0].cost_to_go.abs());
        lyapunov.checked += 1;
        lyapunov.worst_margin = lyapunov.worst_margin.max(margin);
        if margin > opts.lyapunov_tol {
            lyapunov.violations += 1;
        }
    }
    if lyapunov.checked == 0 {
        lyapunov.worst_margin = 0.0;
    }
    let max_iterations = records.iter().map(|r| r.iterations).max().unwrap_or(0);
    let mean_iterations = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.iterations as f64).sum::<f64>() / records.len() as f64
    };
    let converged = early_stop.is_none() && x.amax() < opts.converge_tol;
    ClosedLoopLog {
        summary: RunSummary {
            steps_run: records.len(),
            total_cost,
            converged,
            max_violation,
            infeasible_steps,
            feasibility_losses: losses,
            early_stop,
            lyapunov,
            max_iterations,
            mean_iterations,
        },
        final_state: x.iter().copied().collect(),
        records,
    }
}

/// Upright-capture test for the cart-pendulum (state `(x_c, ẋ_c, φ, φ̇)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCriterion {
    pub angle: f64,
    pub rate: f64,
    /// Consecutive samples inside the band.
    pub hold: usize,
    /// Latest admissible start of the holding window (s).
    pub deadline: f64,
    pub rail: f64,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        Self {
            angle: 5f64.to_radians(),
            rate: 30f64.to_radians(),
            hold: 25,
            deadline: 2.0,
            rail: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwingUpOutcome {
    pub success: bool,
    /// Start of the first holding window (s).
    pub capture_time: Option<f64>,
    pub max_rail: f64,
    pub rail_ok: bool,
}

impl SuccessCriterion {
    pub fn evaluate(&self, log: &ClosedLoopLog, ts: f64) -> SwingUpOutcome {
        let mut run = 0;
        let mut capture = None;
        let mut max_rail = 0.0f64;
        for (j, x) in log.states().enumerate() {
            max_rail = max_rail.max(x[0].abs());
            if wrap_angle(x[2]).abs() < self.angle && x[3].abs() < self.rate {
                run += 1;
                if run == self.hold && capture.is_none() {
                    capture = Some((j + 1 - self.hold) as f64 * ts);
                }
            } else {
                run = 0;
            }
        }
        let rail_ok = max_rail <= self.rail + 1e-9;
        SwingUpOutcome {
            success: rail_ok && log.summary.early_stop.is_none() && capture.is_some_and(|t| t <= self.deadline),
            capture_time: capture,
            max_rail,
            rail_ok,
        }
    }
}

/// Maps an angle to `(−π, π]`.
pub fn wrap_angle(phi: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// `J` recomputed from logged coefficients: `η_xᵀ(Q⊗J̄)η_x + η_uᵀ(R⊗J̄)η_u`.
pub fn parametrized_cost(q: &Matrix, r: &Matrix, gram: &Matrix, eta_x: &ParamVector, eta_u: &ParamVector) -> f64 {
    let quad = |w: &Matrix, eta: &ParamVector| {
        let s = gram.nrows();
        let v = eta.as_vector();
        let mut acc = 0.0;
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                if w[(i, j)] != 0.0 {
                    acc += w[(i, j)] * v.rows(i * s, s).dot(&(gram * v.rows(j * s, s)));
                }
            }
        }
        acc
    };
    quad(q, eta_x) + quad(r, eta_u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_is_periodic() {
        assert!((wrap_angle(2.0 * std::f64::consts::PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
    }

    #[test]
    fn disturbance_is_bounded_and_replayable() {
        let d = DisturbanceSpec {
            scale: vec![1.0, 2.0],
            n_max: 0.5,
            mode: DisturbanceMode::PerState,
            seed: 7,
        };
        for k in 0..200 {
            let v = d.sample(3, k);
            assert!(v[0].abs() <= 0.5 && v[1].abs() <= 1.0);
            assert_eq!(v, d.sample(3, k));
        }
        assert_ne!(d.sample(3, 0), d.sample(4, 0));
        let c = DisturbanceSpec {
            mode: DisturbanceMode::Common,
            ..d
        };
        let v = c.sample(0, 5);
        assert!((v[1] - 2.0 * v[0]).abs() < 1e-15);
    }

    #[test]
    fn stream_ids_split_experiment_and_index() {
        assert_eq!(streams::id(2, 5), (2 << 32) | 5);
        assert_ne!(streams::id(1, 0), streams::id(2, 0));
    }
}
