//! Subcommands behind the `shiftmpc` binary.
//!
//! Exit codes: 0 success (infeasible initial states are data, not failures),
//! 1 I/O or solver failure, 2 invalid config, 3 `N_max` iteration cap reached.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use shiftmpc_core::admissible::{compute_nmax, NmaxError};
use shiftmpc_core::basis::BasisFamily;
use shiftmpc_core::lti::LtiController;

use crate::config::{ConfigError, ExperimentConfig, Plant, SweepConfig};
use crate::experiments::{self, ExperimentError, PendulumSetup};
use crate::harness::{draw_initial_states, run_closed_loop, streams, LtiMpc, RunOptions, RunSummary, SwingUpOutcome};
use crate::io;

#[derive(Debug, Parser)]
#[command(name = "shiftmpc", version, about = "Shift-invariant parametrized MPC experiments")]
pub struct Args {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parent directory of the run directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps; defaults to the number of cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Dimension, spectral radius, Gram conditioning and decay of the family.
    BasisInspect,
    /// Computes the constraint horizon and writes its certificate.
    Nmax,
    /// One closed-loop run.
    Run,
    /// The sweep in the config's `[sweep]` table.
    Sweep,
    /// Prints the JSON schema of the config file.
    Schema,
}

impl Command {
    fn label(self) -> &'static str {
        match self {
            Command::BasisInspect => "basis",
            Command::Nmax => "nmax",
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Schema => "schema",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("no N_max certified up to j = {j_cap}; certificate in {dir}")]
    CapReached { j_cap: usize, dir: PathBuf },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Invalid { .. }) => 2,
            CliError::CapReached { .. } => 3,
            _ => 1,
        }
    }
}

/// Where a command left its artifacts.
#[derive(Debug)]
pub struct Outcome {
    pub dir: Option<PathBuf>,
}

/// Parses `argv`, runs, reports errors on stderr and returns the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::invalid("--config", "this command needs a config file"))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.display().to_string());
    }
    Ok(cfg.resolved())
}

pub fn execute(args: &Args) -> Result<Outcome, CliError> {
    if let Command::Schema = args.command {
        println!("{}", serde_json::to_string_pretty(&ExperimentConfig::schema()).expect("schema"));
        return Ok(Outcome { dir: None });
    }
    let cfg = load(args)?;
    let parent = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "runs".into()));
    let dir = io::create_run_dir(&parent, args.command.label())?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| match args.command {
        Command::BasisInspect => basis_inspect(&cfg, &dir),
        Command::Nmax => nmax(&cfg, &dir),
        Command::Run => run(&cfg, &dir),
        Command::Sweep => sweep(&cfg, &dir),
        Command::Schema => unreachable!(),
    })?;
    println!("artifacts: {}", dir.display());
    Ok(Outcome { dir: Some(dir) })
}

#[derive(Debug, Serialize)]
pub struct EnvelopeRow {
    pub k: usize,
    /// `‖Mᵏ‖₂`.
    pub norm_power: f64,
    pub norm_tau: f64,
}

#[derive(Debug, Serialize)]
pub struct BasisReport {
    pub s: usize,
    pub spectral_radius: f64,
    pub gram_condition: f64,
    pub gram_min_eigenvalue: f64,
    /// Linear independence: `J̄ ≻ 0`.
    pub a1: bool,
    /// Schur stability: `ρ(M) < 1`.
    pub a2: bool,
    /// First `k` with `‖τ(k)‖ ≤ 1e-6·‖τ(0)‖`, if below 10⁶.
    pub decay_samples: Option<usize>,
    pub envelope: Vec<EnvelopeRow>,
    pub family_sha256: String,
}

pub fn basis_report(family: &BasisFamily) -> Result<BasisReport, shiftmpc_core::Error> {
    let gram = family.gram()?;
    let marks = [0usize, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000];
    let mut envelope = Vec::new();
    let mut power = shiftmpc_core::Matrix::identity(family.dim(), family.dim());
    let mut k = 0;
    for &mark in &marks {
        while k < mark {
            power = family.shift_matrix() * power;
            k += 1;
        }
        envelope.push(EnvelopeRow {
            k,
            norm_power: shiftmpc_core::linalg::singular_values(&power).into_iter().fold(0.0, f64::max),
            norm_tau: (&power * family.tau0()).norm(),
        });
    }
    let t0 = family.tau0().norm();
    let mut tau = family.tau0().clone();
    let mut decay = None;
    for k in 0..1_000_000 {
        if tau.norm() <= 1e-6 * t0 {
            decay = Some(k);
            break;
        }
        tau = family.shift_matrix() * tau;
    }
    let rho = family.spectral_radius();
    let min_eig = gram.min_eigenvalue();
    Ok(BasisReport {
        s: family.dim(),
        spectral_radius: rho,
        gram_condition: gram.condition_number(),
        gram_min_eigenvalue: min_eig,
        a1: min_eig > 1e-12 * gram.max_eigenvalue(),
        a2: rho < 1.0,
        decay_samples: decay,
        envelope,
        family_sha256: io::family_hash(family),
    })
}

fn build(cfg: &ExperimentConfig) -> Result<(Plant, BasisFamily), CliError> {
    let plant = cfg.build_plant()?;
    let family = cfg.build_family(plant.ts())?;
    Ok((plant, family))
}

fn basis_inspect(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    let (_, family) = build(cfg)?;
    let report = basis_report(&family).map_err(|e| CliError::Experiment(e.into()))?;
    println!("s = {}", report.s);
    println!("spectral radius = {:.6e}", report.spectral_radius);
    println!("gram condition number = {:.6e}", report.gram_condition);
    println!("A1 (Gram positive definite): {}", verdict(report.a1));
    println!("A2 (Schur stable): {}", verdict(report.a2));
    match report.decay_samples {
        Some(k) => println!("|tau(k)| <= 1e-6 |tau(0)| from k = {k}"),
        None => println!("|tau(k)| above 1e-6 |tau(0)| for 1e6 samples"),
    }
    println!("{:>6} {:>14} {:>14}", "k", "|M^k|", "|tau(k)|");
    for row in &report.envelope {
        println!("{:>6} {:>14.6e} {:>14.6e}", row.k, row.norm_power, row.norm_tau);
    }
    io::write_json(&dir.join("basis.json"), "basis_report", &report)?;
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn nmax(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    let (plant, family) = build(cfg)?;
    let opts = cfg.nmax_options(&plant);
    let result = compute_nmax(&family, plant.constraints(), &opts);
    let cert = io::NmaxCertificate::new(&family, plant.constraints(), opts.dynamics.is_some(), &result);
    io::write_json(&dir.join("nmax.json"), "nmax_certificate", &cert)?;
    match result {
        Ok(r) => {
            println!("N_max = {} (search from j = {}, {} iterations)", r.nmax, r.start, r.iterations);
            Ok(())
        }
        Err(NmaxError::CapReached { j_cap, .. }) => Err(CliError::CapReached {
            j_cap,
            dir: dir.to_path_buf(),
        }),
        Err(e) => Err(ExperimentError::Nmax {
            label: "config".into(),
            source: e,
        }
        .into()),
    }
}

fn resolve_nmax(cfg: &ExperimentConfig, plant: &Plant, family: &BasisFamily) -> Result<usize, CliError> {
    if let Some(v) = cfg.nmax.value {
        return Ok(v);
    }
    match compute_nmax(family, plant.constraints(), &cfg.nmax_options(plant)) {
        Ok(r) => Ok(r.nmax),
        Err(NmaxError::CapReached { j_cap, .. }) => Err(CliError::CapReached {
            j_cap,
            dir: PathBuf::new(),
        }),
        Err(e) => Err(ExperimentError::Nmax {
            label: "config".into(),
            source: e,
        }
        .into()),
    }
}

#[derive(Debug, Serialize)]
struct RunDocument<'a> {
    nmax: usize,
    family_sha256: String,
    summary: &'a RunSummary,
    final_state: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    swing_up: Option<SwingUpOutcome>,
}

fn pendulum_setup(cfg: &ExperimentConfig, plant: Plant, family: BasisFamily, nmax: usize) -> Result<PendulumSetup, CliError> {
    let Plant::Pendulum(p) = plant else {
        return Err(CliError::Other("expected the pendulum plant".into()));
    };
    let mut setup = PendulumSetup::new(p.plant, family, p.q, p.r, p.cons, nmax, cfg.controller.k_trunc, p.u_max)?;
    setup.sqp = cfg.sqp_options();
    setup.warm_budget = cfg.controller.warm_budget;
    setup.steps = cfg.steps();
    setup.policy = cfg.policy();
    setup.criterion.rail = p.rail;
    if let Some(path) = &cfg.controller.initial_guess {
        let (u, x) = io::read_guess_csv(path, 4, 1).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        setup.set_guess(&u, x.as_ref())?;
    }
    let tail = setup.problem.truncation_tail();
    if tail > 1e-8 {
        eprintln!("warning: rho(M)^K_trunc = {tail:.1e}; increase controller.k_trunc");
    }
    Ok(setup)
}

fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    let (plant, family) = build(cfg)?;
    let nmax = resolve_nmax(cfg, &plant, &family)?;
    let hash = io::family_hash(&family);
    let dist = cfg.disturbance();
    let stream = streams::id(streams::DISTURBANCE, 0);
    let (log, swing_up) = match plant {
        Plant::Linear(p) => {
            let mut ctrl = LtiController::new(p.clone(), family, nmax).map_err(ExperimentError::from)?;
            ctrl.set_warm_start(cfg.controller.warm_start);
            let opts = RunOptions {
                policy: cfg.policy(),
                record_wall_time: cfg.run.record_wall_time,
                ..RunOptions::new(cfg.steps())
            };
            let log = run_closed_loop(&p, &mut LtiMpc(ctrl), &cfg.initial_state(), &opts, dist.as_ref().map(|d| (d, stream)))
                .map_err(ExperimentError::from)?;
            (log, None)
        }
        plant @ Plant::Pendulum(_) => {
            let setup = pendulum_setup(cfg, plant, family, nmax)?;
            let mut ctrl = setup.controller();
            let log = run_closed_loop(
                setup.problem.plant(),
                &mut ctrl,
                &cfg.initial_state(),
                &setup.run_options(cfg.run.record_wall_time),
                dist.as_ref().map(|d| (d, stream)),
            )
            .map_err(ExperimentError::from)?;
            let outcome = setup.criterion.evaluate(&log, setup.problem.plant().ts);
            (log, Some(outcome))
        }
    };
    io::write_log_csv(&dir.join("log.csv"), &log)?;
    let s = &log.summary;
    println!(
        "{} steps, closed-loop cost {:.6e}, converged {}, max violation {:.3e}",
        s.steps_run, s.total_cost, s.converged, s.max_violation
    );
    if let Some(stop) = &s.early_stop {
        println!("stopped at k = {} ({})", stop.k, stop.status);
    }
    if let Some(o) = &swing_up {
        println!("swing-up success {}, capture time {:?}", o.success, o.capture_time);
    }
    let doc = RunDocument {
        nmax,
        family_sha256: hash,
        summary: s,
        final_state: &log.final_state,
        swing_up,
    };
    io::write_json(&dir.join("summary.json"), "run_summary", &doc)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepDocument<T: Serialize> {
    sweep: &'static str,
    seed: u64,
    rows: Vec<T>,
}

fn sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    let plant = cfg.build_plant()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::invalid("sweep", "the sweep command needs a [sweep] table"))?;
    let table = dir.join("table.csv");
    let summary = dir.join("summary.json");
    match (sweep, plant) {
        (SweepConfig::Nu { values, s, ics, ic_half_width, steps }, Plant::Linear(p)) => {
            let x0s = draw_initial_states(cfg.seed, *ics, p.num_states(), *ic_half_width);
            let rows = experiments::sweep_nu(&p, *s, values, &x0s, *steps, &cfg.nmax_options(&Plant::Linear(p.clone())))?;
            for r in &rows {
                println!(
                    "nu = {:.3}: N_max {}, infeasible {}/{}, mean cost {:.6e}",
                    r.nu,
                    r.nmax,
                    r.infeasible,
                    r.feasible + r.infeasible,
                    r.mean_cost
                );
            }
            io::write_rows_csv(&table, &rows)?;
            io::write_json(&summary, "sweep_summary", &SweepDocument { sweep: "nu", seed: cfg.seed, rows })?;
        }
        (SweepConfig::S { values, nu, ics, ic_half_width, steps }, Plant::Linear(p)) => {
            let x0s = draw_initial_states(cfg.seed, *ics, p.num_states(), *ic_half_width);
            let rows = experiments::sweep_s(&p, *nu, values, &x0s, *steps, &cfg.nmax_options(&Plant::Linear(p.clone())))?;
            for r in &rows {
                println!(
                    "s = {}: N_max {}, infeasible {}/{}, mean cost {:.6e}",
                    r.s,
                    r.nmax,
                    r.infeasible,
                    r.feasible + r.infeasible,
                    r.mean_cost
                );
            }
            io::write_rows_csv(&table, &rows)?;
            io::write_json(&summary, "sweep_summary", &SweepDocument { sweep: "s", seed: cfg.seed, rows })?;
        }
        (SweepConfig::Robustness { amplitudes, runs, steps }, plant @ Plant::Pendulum(_)) => {
            let family = cfg.build_family(plant.ts())?;
            let nmax = resolve_nmax(cfg, &plant, &family)?;
            let mut setup = pendulum_setup(cfg, plant, family, nmax)?;
            setup.steps = *steps;
            let base = cfg.disturbance().unwrap_or(crate::harness::DisturbanceSpec {
                scale: crate::harness::DisturbanceSpec::pendulum_scale(),
                n_max: 0.0,
                mode: crate::harness::DisturbanceMode::Common,
                seed: cfg.seed,
            });
            let rows = experiments::robustness_sweep(&setup, amplitudes, *runs, &base)?;
            for r in &rows {
                println!(
                    "n_max = {}: success {}/{}, mean cost {:.6e}, max |x_c| {:.4}",
                    r.n_max, r.successes, r.runs, r.mean_cost, r.max_rail
                );
            }
            io::write_rows_csv(&table, &rows)?;
            io::write_json(&summary, "sweep_summary", &SweepDocument { sweep: "robustness", seed: cfg.seed, rows })?;
        }
        _ => return Err(ConfigError::invalid("sweep.kind", "sweep kind does not match the plant").into()),
    }
    Ok(())
}
