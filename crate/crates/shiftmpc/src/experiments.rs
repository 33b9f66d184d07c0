//! Batch experiments. Independent runs go through rayon; call them inside
//! `ThreadPool::install` to bound the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shiftmpc_core::admissible::{compute_nmax, AffineConstraintSet, NmaxError, NmaxOptions};
use shiftmpc_core::basis::{BasisFamily, ParamVector};
use shiftmpc_core::lti::{LtiController, LtiProblem};
use shiftmpc_core::nonlinear::{
    project_trajectory, swing_up_guess, CartPendulum, GuessOptions, NlpProblem, NonlinearController, NonlinearPlant, SqpOptions,
};
use shiftmpc_core::{Matrix, Vector};

use crate::harness::{
    run_closed_loop, streams, ClosedLoopLog, DisturbanceSpec, HarnessError, InfeasiblePolicy, LtiMpc, NonlinearMpc,
    RunOptions, SuccessCriterion, SwingUpOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("N_max for {label}: {source}")]
    Nmax {
        label: String,
        #[source]
        source: NmaxError,
    },
    #[error(transparent)]
    Core(#[from] shiftmpc_core::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuRow {
    pub nu: f64,
    pub nmax: usize,
    pub feasible: usize,
    pub infeasible: usize,
    /// Mean closed-loop cost over the feasible initial states.
    pub mean_cost: f64,
    pub mean_iterations: f64,
    /// Runs whose Lyapunov monitor fired.
    pub lyapunov_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SRow {
    pub s: usize,
    pub nmax: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub mean_cost: f64,
    /// Mean over runs of the slowest step; hardware dependent.
    pub mean_max_wall_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub n_max: f64,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_cost: f64,
    pub max_rail: f64,
    pub rail_violations: usize,
    /// Mean capture time over the runs that captured.
    pub mean_capture_time: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn nmax_for(family: &BasisFamily, cons: &AffineConstraintSet, opts: &NmaxOptions, label: String) -> Result<usize, ExperimentError> {
    compute_nmax(family, cons, opts)
        .map(|r| r.nmax)
        .map_err(|source| ExperimentError::Nmax { label, source })
}

/// Undisturbed runs of one controller from every initial state.
pub fn run_batch(problem: &LtiProblem, ctrl: &LtiController, ics: &[Vector], opts: &RunOptions) -> Result<Vec<ClosedLoopLog>, ExperimentError> {
    ics.par_iter()
        .map(|x0| {
            let mut c = LtiMpc(ctrl.clone());
            run_closed_loop(problem, &mut c, x0, opts, None).map_err(ExperimentError::from)
        })
        .collect()
}

fn lti_options(steps: usize, wall: bool) -> RunOptions {
    RunOptions {
        record_wall_time: wall,
        policy: InfeasiblePolicy::Stop,
        ..RunOptions::new(steps)
    }
}

/// Laguerre decay-rate sweep at dimension `s`, `N_max` recomputed per value.
pub fn sweep_nu(
    problem: &LtiProblem,
    s: usize,
    values: &[f64],
    ics: &[Vector],
    steps: usize,
    nmax_opts: &NmaxOptions,
) -> Result<Vec<NuRow>, ExperimentError> {
    values
        .iter()
        .map(|&nu| {
            let family = BasisFamily::laguerre(s, nu, problem.ts)?;
            let nmax = nmax_for(&family, &problem.cons, nmax_opts, format!("nu = {nu}"))?;
            let ctrl = LtiController::new(problem.clone(), family, nmax)?;
            let logs = run_batch(problem, &ctrl, ics, &lti_options(steps, false))?;
            let ok: Vec<&ClosedLoopLog> = logs.iter().filter(|l| l.summary.early_stop.is_none()).collect();
            Ok(NuRow {
                nu,
                nmax,
                feasible: ok.len(),
                infeasible: logs.len() - ok.len(),
                mean_cost: mean(ok.iter().map(|l| l.summary.total_cost)),
                mean_iterations: mean(logs.iter().map(|l| l.summary.mean_iterations)),
                lyapunov_violations: logs.iter().filter(|l| l.summary.lyapunov.violations > 0).count(),
            })
        })
        .collect()
}

/// Laguerre dimension sweep at decay rate `nu`.
pub fn sweep_s(
    problem: &LtiProblem,
    nu: f64,
    values: &[usize],
    ics: &[Vector],
    steps: usize,
    nmax_opts: &NmaxOptions,
) -> Result<Vec<SRow>, ExperimentError> {
    values
        .iter()
        .map(|&s| {
            let family = BasisFamily::laguerre(s, nu, problem.ts)?;
            let nmax = nmax_for(&family, &problem.cons, nmax_opts, format!("s = {s}"))?;
            let ctrl = LtiController::new(problem.clone(), family, nmax)?;
            let logs = run_batch(problem, &ctrl, ics, &lti_options(steps, true))?;
            let ok: Vec<&ClosedLoopLog> = logs.iter().filter(|l| l.summary.early_stop.is_none()).collect();
            let max_wall = |l: &ClosedLoopLog| l.records.iter().filter_map(|r| r.wall_time_us).fold(0.0, f64::max);
            Ok(SRow {
                s,
                nmax,
                feasible: ok.len(),
                infeasible: logs.len() - ok.len(),
                mean_cost: mean(ok.iter().map(|l| l.summary.total_cost)),
                mean_max_wall_us: mean(logs.iter().map(max_wall)),
            })
        })
        .collect()
}

/// Everything a swing-up run needs, built once and shared by all runs.
#[derive(Debug, Clone)]
pub struct PendulumSetup {
    pub problem: NlpProblem<CartPendulum>,
    pub sqp: SqpOptions,
    pub warm_budget: usize,
    pub guess: (ParamVector, ParamVector),
    pub criterion: SuccessCriterion,
    pub steps: usize,
    pub policy: InfeasiblePolicy,
}

impl PendulumSetup {
    /// Projects the open-loop swing-up guess from the hanging state onto `family`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: CartPendulum,
        family: BasisFamily,
        q: Matrix,
        r: Matrix,
        cons: AffineConstraintSet,
        nmax: usize,
        k_trunc: usize,
        u_max: f64,
    ) -> Result<Self, ExperimentError> {
        let guess_opts = GuessOptions {
            u_max,
            q: q.clone(),
            r: r.clone(),
            ..GuessOptions::default()
        };
        let guess = swing_up_guess(&plant, &CartPendulum::hanging(), &guess_opts)?.project(&family)?;
        let problem = NlpProblem::with_truncation(plant, family, q, r, cons, nmax, k_trunc)?;
        Ok(Self {
            problem,
            // a disturbed state can leave the rail set; relax rather than give up
            sqp: SqpOptions {
                restore: true,
                ..SqpOptions::default()
            },
            warm_budget: 8,
            guess,
            criterion: SuccessCriterion::default(),
            steps: crate::config::pend_steps(),
            policy: InfeasiblePolicy::ApplyIterate,
        })
    }

    /// Replaces the first-solve guess with sampled trajectories. Without
    /// states, `inputs` are simulated from the hanging position.
    pub fn set_guess(&mut self, inputs: &Matrix, states: Option<&Matrix>) -> Result<(), ExperimentError> {
        let family = self.problem.family();
        let states = match states {
            Some(x) => x.clone(),
            None => {
                let plant = self.problem.plant();
                let mut x = CartPendulum::hanging();
                let mut out = Matrix::zeros(x.len(), inputs.ncols());
                for k in 0..inputs.ncols() {
                    out.set_column(k, &x);
                    x = plant.step(k, &x, &inputs.column(k).into_owned());
                }
                out
            }
        };
        self.guess = (project_trajectory(&states, family)?, project_trajectory(inputs, family)?);
        Ok(())
    }

    pub fn controller(&self) -> NonlinearMpc<CartPendulum> {
        NonlinearMpc {
            inner: NonlinearController::new(self.problem.clone(), self.sqp, self.warm_budget),
            guess: self.guess.clone(),
        }
    }

    pub fn run_options(&self, wall: bool) -> RunOptions {
        RunOptions {
            policy: self.policy,
            record_wall_time: wall,
            ..RunOptions::new(self.steps)
        }
    }

    /// One swing-up from the hanging state.
    pub fn swing_up(&self, disturbance: Option<(&DisturbanceSpec, u64)>, wall: bool) -> Result<(ClosedLoopLog, SwingUpOutcome), ExperimentError> {
        let mut ctrl = self.controller();
        let log = run_closed_loop(
            self.problem.plant(),
            &mut ctrl,
            &CartPendulum::hanging(),
            &self.run_options(wall),
            disturbance,
        )?;
        let outcome = self.criterion.evaluate(&log, self.problem.plant().ts);
        Ok((log, outcome))
    }
}

/// Disturbed swing-ups. Run `r` uses stream `(DISTURBANCE, r)` at every
/// amplitude, so the amplitudes share one noise shape. A zero amplitude is
/// deterministic and runs once.
pub fn robustness_sweep(
    setup: &PendulumSetup,
    amplitudes: &[f64],
    runs: usize,
    base: &DisturbanceSpec,
) -> Result<Vec<RobustnessRow>, ExperimentError> {
    amplitudes
        .iter()
        .map(|&a| {
            let spec = DisturbanceSpec { n_max: a, ..base.clone() };
            let count = if a == 0.0 { 1 } else { runs.max(1) };
            let results = (0..count)
                .into_par_iter()
                .map(|r| setup.swing_up(Some((&spec, streams::id(streams::DISTURBANCE, r as u64))), false))
                .collect::<Result<Vec<_>, _>>()?;
            let successes = results.iter().filter(|(_, o)| o.success).count();
            Ok(RobustnessRow {
                n_max: a,
                runs: count,
                successes,
                success_rate: successes as f64 / count as f64,
                mean_cost: mean(results.iter().map(|(l, _)| l.summary.total_cost)),
                max_rail: results.iter().map(|(_, o)| o.max_rail).fold(0.0, f64::max),
                rail_violations: results.iter().filter(|(_, o)| !o.rail_ok).count(),
                mean_capture_time: mean(results.iter().filter_map(|(_, o)| o.capture_time)),
            })
        })
        .collect()
}
