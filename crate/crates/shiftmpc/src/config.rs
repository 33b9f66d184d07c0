//! Experiment configuration read from TOML.
//!
//! Unknown keys are rejected everywhere and errors carry the path of the
//! offending key, e.g. `family.spec.tail.nu`. [`ExperimentConfig::schema`]
//! returns the JSON schema that a config validates against.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use shiftmpc_core::admissible::{AffineConstraintSet, NmaxOptions, StartIndex};
use shiftmpc_core::basis::BasisFamily;
use shiftmpc_core::lti::{quadruple_integrator, LtiProblem};
use shiftmpc_core::nonlinear::{CartPendulum, PendulumParams, SqpOptions};
use shiftmpc_core::{Matrix, Vector};

use crate::harness::{DisturbanceMode, DisturbanceSpec, InfeasiblePolicy};

/// Bumped whenever a key is renamed or its meaning changes.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Dotted key path of an invalid config, if any.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Parent of the per-run output directories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub plant: PlantConfig,
    pub family: FamilyConfig,
    #[serde(default)]
    pub nmax: NmaxConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceConfig>,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    /// One axis of `x⁽⁴⁾ = u`, zero-order hold, cost `|x|² + r·u²`.
    QuadrupleIntegrator {
        #[serde(default = "qi_ts")]
        ts: f64,
        #[serde(default = "qi_umax")]
        u_max: f64,
        #[serde(default = "qi_r")]
        r: f64,
    },
    /// Cart-pendulum with state `(x_c, ẋ_c, φ, φ̇)`, `φ = 0` upright.
    Pendulum {
        #[serde(default = "pend_ts")]
        ts: f64,
        #[serde(default = "pend_umax")]
        u_max: f64,
        #[serde(default = "pend_rail")]
        rail: f64,
        #[serde(default = "pend_q")]
        q_diag: Vec<f64>,
        #[serde(default = "pend_r")]
        r: f64,
        #[serde(default)]
        params: PendulumParamsConfig,
    },
    /// Discrete-time `x⁺ = Ax + Bu` given row by row.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        ts: f64,
        #[serde(default)]
        state_bounds: Vec<Bound>,
        #[serde(default)]
        input_bounds: Vec<Bound>,
    },
}

fn qi_ts() -> f64 {
    0.02
}
fn qi_umax() -> f64 {
    0.5
}
fn qi_r() -> f64 {
    0.05
}
fn pend_ts() -> f64 {
    0.02
}
fn pend_umax() -> f64 {
    24.0
}
fn pend_rail() -> f64 {
    0.45
}
fn pend_q() -> Vec<f64> {
    vec![20.0, 2.0, 50.0, 2.0]
}
fn pend_r() -> f64 {
    10.0
}

/// `|x_index| ≤ limit` or `|u_index| ≤ limit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub index: usize,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PendulumParamsConfig {
    pub m: f64,
    pub cart_mass: f64,
    pub l: f64,
    pub k_m: f64,
    pub k_n: f64,
    pub r_m: f64,
    pub r_zr: f64,
    pub g: f64,
}

impl Default for PendulumParamsConfig {
    fn default() -> Self {
        let p = PendulumParams::default();
        Self {
            m: p.m,
            cart_mass: p.cart_mass,
            l: p.l,
            k_m: p.k_m,
            k_n: p.k_n,
            r_m: p.r_m,
            r_zr: p.r_zr,
            g: p.g,
        }
    }
}

impl From<&PendulumParamsConfig> for PendulumParams {
    fn from(c: &PendulumParamsConfig) -> Self {
        PendulumParams {
            m: c.m,
            cart_mass: c.cart_mass,
            l: c.l,
            k_m: c.k_m,
            k_n: c.k_n,
            r_m: c.r_m,
            r_zr: c.r_zr,
            g: c.g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub spec: FamilySpec,
    /// Replace `τ` by `L⁻¹τ` with `J̄ = LLᵀ`, so that the Gram matrix is `I`.
    #[serde(default)]
    pub orthonormalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Classic {
        s: usize,
    },
    /// `ts` defaults to the plant's sampling time.
    Laguerre {
        s: usize,
        nu: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ts: Option<f64>,
    },
    DampedFourier {
        s: usize,
        nu: f64,
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ts: Option<f64>,
    },
    /// `head` impulse samples, then the tail family.
    Cascade {
        head: usize,
        tail: Box<FamilySpec>,
    },
    Union {
        parts: Vec<FamilySpec>,
    },
    /// Explicit `M` (row by row) and `τ(0)`.
    Raw {
        m: Vec<Vec<f64>>,
        tau0: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NmaxStart {
    Verbatim,
    Zero,
    At(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NmaxConfig {
    /// Skip the computation and use this horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<usize>,
    #[serde(default = "default_start")]
    pub start: NmaxStart,
    /// Restrict the search to coefficients that satisfy the linear(ized)
    /// dynamics rows.
    #[serde(default)]
    pub couple_dynamics: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_cap: Option<usize>,
}

fn default_start() -> NmaxStart {
    NmaxStart::Verbatim
}

impl Default for NmaxConfig {
    fn default() -> Self {
        Self {
            value: None,
            start: NmaxStart::Verbatim,
            couple_dynamics: false,
            j_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Warm-start the LTI QP from the shifted working set.
    #[serde(default = "yes")]
    pub warm_start: bool,
    /// SQP iterations of the first (cold) solve.
    #[serde(default = "sqp_iter")]
    pub sqp_max_iter: usize,
    /// SQP iterations of every later, shifted solve.
    #[serde(default = "warm_budget")]
    pub warm_budget: usize,
    #[serde(default = "sqp_tol")]
    pub sqp_tol: f64,
    /// Relax state rows of infeasible SQP subproblems.
    #[serde(default = "yes")]
    pub restore: bool,
    /// Truncation of the Galerkin sums.
    #[serde(default = "k_trunc")]
    pub k_trunc: usize,
    /// CSV with columns `u0` and optionally `x0..x3` replacing the built-in
    /// swing-up guess.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_guess: Option<std::path::PathBuf>,
}

fn yes() -> bool {
    true
}
fn sqp_iter() -> usize {
    SqpOptions::default().max_iter
}
fn warm_budget() -> usize {
    8
}
fn sqp_tol() -> f64 {
    SqpOptions::default().tol
}
fn k_trunc() -> usize {
    shiftmpc_core::nonlinear::DEFAULT_K_TRUNC
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            warm_start: true,
            sqp_max_iter: sqp_iter(),
            warm_budget: warm_budget(),
            sqp_tol: sqp_tol(),
            restore: true,
            k_trunc: k_trunc(),
            initial_guess: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PolicyConfig {
    Stop,
    ApplyIterate,
}

impl From<PolicyConfig> for InfeasiblePolicy {
    fn from(p: PolicyConfig) -> Self {
        match p {
            PolicyConfig::Stop => InfeasiblePolicy::Stop,
            PolicyConfig::ApplyIterate => InfeasiblePolicy::ApplyIterate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to `(0.5, 0.5, 0.5, 0.5)` for the quadruple integrator and
    /// the hanging state for the pendulum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Defaults to `stop` for linear plants and `apply_iterate` for the pendulum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_infeasible: Option<PolicyConfig>,
    /// Wall times are the only nondeterministic log column.
    #[serde(default = "yes")]
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            x0: None,
            steps: None,
            on_infeasible: None,
            record_wall_time: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    /// Laguerre decay rates with `N_max` recomputed per value.
    Nu {
        values: Vec<f64>,
        s: usize,
        #[serde(default = "ics")]
        ics: usize,
        #[serde(default = "ic_half_width")]
        ic_half_width: f64,
        #[serde(default = "lti_steps")]
        steps: usize,
    },
    /// Laguerre dimensions at a fixed decay rate.
    S {
        values: Vec<usize>,
        nu: f64,
        #[serde(default = "ics")]
        ics: usize,
        #[serde(default = "ic_half_width")]
        ic_half_width: f64,
        #[serde(default = "lti_steps")]
        steps: usize,
    },
    /// Disturbed swing-ups, `runs` per amplitude.
    Robustness {
        amplitudes: Vec<f64>,
        #[serde(default = "runs")]
        runs: usize,
        #[serde(default = "pend_steps")]
        steps: usize,
    },
}

fn ics() -> usize {
    100
}
fn ic_half_width() -> f64 {
    0.5
}
fn runs() -> usize {
    10
}
pub(crate) fn lti_steps() -> usize {
    2000
}
pub(crate) fn pend_steps() -> usize {
    150
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    /// Per-state scale; defaults to `(0.02 m, 0.005 m/s, 1°, 0.5°/s)` in SI units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    pub n_max: f64,
    #[serde(default = "common")]
    pub mode: DisturbanceMode,
}

fn common() -> DisturbanceMode {
    DisturbanceMode::Common
}

/// Built objects for a linear plant.
pub enum Plant {
    Linear(LtiProblem),
    Pendulum(PendulumSetupConfig),
}

/// Built pendulum objects and the running cost.
pub struct PendulumSetupConfig {
    pub plant: CartPendulum,
    pub q: Matrix,
    pub r: Matrix,
    pub cons: AffineConstraintSet,
    pub rail: f64,
    pub u_max: f64,
}

impl Plant {
    pub fn num_states(&self) -> usize {
        match self {
            Plant::Linear(p) => p.num_states(),
            Plant::Pendulum(_) => 4,
        }
    }

    pub fn constraints(&self) -> &AffineConstraintSet {
        match self {
            Plant::Linear(p) => &p.cons,
            Plant::Pendulum(p) => &p.cons,
        }
    }

    pub fn ts(&self) -> f64 {
        match self {
            Plant::Linear(p) => p.ts,
            Plant::Pendulum(p) => p.plant.ts,
        }
    }

    /// `(A, B)` used for dynamics coupling: the model itself or the
    /// discretized upright linearization.
    pub fn linear_model(&self) -> (Matrix, Matrix) {
        use shiftmpc_core::nonlinear::NonlinearPlant;
        match self {
            Plant::Linear(p) => (p.a.clone(), p.b.clone()),
            Plant::Pendulum(p) => {
                let (_, a, b) = p.plant.linearize(0, &Vector::zeros(4), &Vector::zeros(1));
                (a, b)
            }
        }
    }
}

fn matrix(rows: &[Vec<f64>], path: &str) -> Result<Matrix, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(ConfigError::invalid(path, "matrix must be nonempty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(ConfigError::invalid(format!("{path}[{i}]"), format!("expected {c} columns")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn core_err(path: &str) -> impl Fn(shiftmpc_core::Error) -> ConfigError + '_ {
    move |e| ConfigError::invalid(path, e.to_string())
}

fn positive(v: f64, path: &str) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::de::Deserializer::parse(text)
            .map_err(|e| ConfigError::invalid("<root>", e.to_string().trim().to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            ConfigError::invalid(path, e.inner().to_string().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
    }

    /// Semantic checks beyond the schema; builds everything once and drops it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::invalid(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        let plant = self.build_plant()?;
        self.build_family(plant.ts())?;
        let n = plant.num_states();
        if let Some(x0) = &self.run.x0 {
            if x0.len() != n {
                return Err(ConfigError::invalid("run.x0", format!("expected {n} entries, found {}", x0.len())));
            }
        }
        if self.run.steps == Some(0) {
            return Err(ConfigError::invalid("run.steps", "must be at least 1"));
        }
        if let Some(d) = &self.disturbance {
            if !(d.n_max >= 0.0 && d.n_max.is_finite()) {
                return Err(ConfigError::invalid("disturbance.n_max", "must be finite and nonnegative"));
            }
            if let Some(sc) = &d.scale {
                if sc.len() != n {
                    return Err(ConfigError::invalid("disturbance.scale", format!("expected {n} entries")));
                }
            } else if !matches!(self.plant, PlantConfig::Pendulum { .. }) {
                return Err(ConfigError::invalid("disturbance.scale", "required for this plant"));
            }
        }
        match &self.sweep {
            Some(SweepConfig::Nu { values, s, .. }) => {
                self.require_linear("sweep")?;
                for (i, v) in values.iter().enumerate() {
                    positive(*v, &format!("sweep.values[{i}]"))?;
                }
                if *s == 0 {
                    return Err(ConfigError::invalid("sweep.s", "must be at least 1"));
                }
            }
            Some(SweepConfig::S { values, nu, .. }) => {
                self.require_linear("sweep")?;
                positive(*nu, "sweep.nu")?;
                if values.contains(&0) {
                    return Err(ConfigError::invalid("sweep.values", "dimensions must be at least 1"));
                }
            }
            Some(SweepConfig::Robustness { amplitudes, .. }) => {
                if !matches!(self.plant, PlantConfig::Pendulum { .. }) {
                    return Err(ConfigError::invalid("sweep.kind", "robustness sweeps need the pendulum plant"));
                }
                if amplitudes.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                    return Err(ConfigError::invalid("sweep.amplitudes", "must be finite and nonnegative"));
                }
            }
            None => {}
        }
        Ok(())
    }

    fn require_linear(&self, path: &str) -> Result<(), ConfigError> {
        match self.plant {
            PlantConfig::Pendulum { .. } => Err(ConfigError::invalid(path, "this sweep needs a linear plant")),
            _ => Ok(()),
        }
    }

    pub fn build_plant(&self) -> Result<Plant, ConfigError> {
        match &self.plant {
            PlantConfig::QuadrupleIntegrator { ts, u_max, r } => {
                positive(*ts, "plant.ts")?;
                positive(*u_max, "plant.u_max")?;
                positive(*r, "plant.r")?;
                quadruple_integrator(*r, *u_max, *ts).map(Plant::Linear).map_err(core_err("plant"))
            }
            PlantConfig::Pendulum {
                ts,
                u_max,
                rail,
                q_diag,
                r,
                params,
            } => {
                positive(*ts, "plant.ts")?;
                positive(*u_max, "plant.u_max")?;
                positive(*rail, "plant.rail")?;
                positive(*r, "plant.r")?;
                if q_diag.len() != 4 {
                    return Err(ConfigError::invalid("plant.q_diag", "expected 4 entries"));
                }
                let plant = CartPendulum::new(params.into(), *ts).map_err(core_err("plant.params"))?;
                let cons = AffineConstraintSet::boxes(4, 1, &[(0, *rail)], &[(0, *u_max)]).map_err(core_err("plant"))?;
                Ok(Plant::Pendulum(PendulumSetupConfig {
                    plant,
                    q: Matrix::from_diagonal(&Vector::from_vec(q_diag.clone())),
                    r: Matrix::from_element(1, 1, *r),
                    cons,
                    rail: *rail,
                    u_max: *u_max,
                }))
            }
            PlantConfig::Linear {
                a,
                b,
                q,
                r,
                ts,
                state_bounds,
                input_bounds,
            } => {
                positive(*ts, "plant.ts")?;
                let a = matrix(a, "plant.a")?;
                let b = matrix(b, "plant.b")?;
                let q = matrix(q, "plant.q")?;
                let r = matrix(r, "plant.r")?;
                let (n, m) = (a.nrows(), b.ncols());
                for (list, dim, path) in [(state_bounds, n, "plant.state_bounds"), (input_bounds, m, "plant.input_bounds")] {
                    for (i, bd) in list.iter().enumerate() {
                        if bd.index >= dim {
                            return Err(ConfigError::invalid(format!("{path}[{i}].index"), format!("must be below {dim}")));
                        }
                        positive(bd.limit, &format!("{path}[{i}].limit"))?;
                    }
                }
                let pairs = |l: &[Bound]| l.iter().map(|b| (b.index, b.limit)).collect::<Vec<_>>();
                let cons = AffineConstraintSet::boxes(n, m, &pairs(state_bounds), &pairs(input_bounds))
                    .map_err(core_err("plant"))?;
                LtiProblem::new(a, b, q, r, cons, *ts).map(Plant::Linear).map_err(core_err("plant"))
            }
        }
    }

    pub fn build_family(&self, plant_ts: f64) -> Result<BasisFamily, ConfigError> {
        let f = build_spec(&self.family.spec, plant_ts, "family.spec")?;
        if self.family.orthonormalize {
            f.orthonormalize().map_err(core_err("family.orthonormalize"))
        } else {
            Ok(f)
        }
    }

    pub fn nmax_options(&self, plant: &Plant) -> NmaxOptions {
        NmaxOptions {
            start: match self.nmax.start {
                NmaxStart::Verbatim => StartIndex::Verbatim,
                NmaxStart::Zero => StartIndex::Zero,
                NmaxStart::At(j) => StartIndex::At(j),
            },
            dynamics: self.nmax.couple_dynamics.then(|| plant.linear_model()),
            j_cap: self.nmax.j_cap,
            ..NmaxOptions::default()
        }
    }

    pub fn sqp_options(&self) -> SqpOptions {
        SqpOptions {
            max_iter: self.controller.sqp_max_iter,
            tol: self.controller.sqp_tol,
            restore: self.controller.restore,
            ..SqpOptions::default()
        }
    }

    pub fn initial_state(&self) -> Vector {
        match (&self.run.x0, &self.plant) {
            (Some(x0), _) => Vector::from_vec(x0.clone()),
            (None, PlantConfig::Pendulum { .. }) => CartPendulum::hanging(),
            (None, PlantConfig::QuadrupleIntegrator { .. }) => Vector::from_element(4, 0.5),
            (None, PlantConfig::Linear { a, .. }) => Vector::from_element(a.len(), 0.5),
        }
    }

    pub fn steps(&self) -> usize {
        self.run.steps.unwrap_or(match self.plant {
            PlantConfig::Pendulum { .. } => pend_steps(),
            _ => lti_steps(),
        })
    }

    pub fn policy(&self) -> InfeasiblePolicy {
        self.run
            .on_infeasible
            .unwrap_or(match self.plant {
                PlantConfig::Pendulum { .. } => PolicyConfig::ApplyIterate,
                _ => PolicyConfig::Stop,
            })
            .into()
    }

    pub fn disturbance(&self) -> Option<DisturbanceSpec> {
        self.disturbance.as_ref().map(|d| DisturbanceSpec {
            scale: d.scale.clone().unwrap_or_else(DisturbanceSpec::pendulum_scale),
            n_max: d.n_max,
            mode: d.mode,
            seed: self.seed,
        })
    }

    /// Copy with every defaulted field written out, suitable for re-running.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let ts = match &c.plant {
            PlantConfig::QuadrupleIntegrator { ts, .. } | PlantConfig::Pendulum { ts, .. } | PlantConfig::Linear { ts, .. } => *ts,
        };
        resolve_ts(&mut c.family.spec, ts);
        c.run.x0 = Some(self.initial_state().iter().copied().collect());
        c.run.steps = Some(self.steps());
        c.run.on_infeasible = Some(match self.policy() {
            InfeasiblePolicy::Stop => PolicyConfig::Stop,
            InfeasiblePolicy::ApplyIterate => PolicyConfig::ApplyIterate,
        });
        if let Some(d) = &mut c.disturbance {
            d.scale.get_or_insert_with(DisturbanceSpec::pendulum_scale);
        }
        c
    }
}

fn resolve_ts(spec: &mut FamilySpec, plant_ts: f64) {
    match spec {
        FamilySpec::Laguerre { ts, .. } | FamilySpec::DampedFourier { ts, .. } => {
            ts.get_or_insert(plant_ts);
        }
        FamilySpec::Cascade { tail, .. } => resolve_ts(tail, plant_ts),
        FamilySpec::Union { parts } => parts.iter_mut().for_each(|p| resolve_ts(p, plant_ts)),
        FamilySpec::Classic { .. } | FamilySpec::Raw { .. } => {}
    }
}

pub fn build_spec(spec: &FamilySpec, plant_ts: f64, path: &str) -> Result<BasisFamily, ConfigError> {
    let err = core_err(path);
    match spec {
        FamilySpec::Classic { s } => BasisFamily::classic(*s).map_err(err),
        FamilySpec::Laguerre { s, nu, ts } => BasisFamily::laguerre(*s, *nu, ts.unwrap_or(plant_ts)).map_err(err),
        FamilySpec::DampedFourier { s, nu, omega, ts } => {
            BasisFamily::damped_fourier(*s, *nu, *omega, ts.unwrap_or(plant_ts)).map_err(err)
        }
        FamilySpec::Cascade { head, tail } => {
            let tail = build_spec(tail, plant_ts, &format!("{path}.tail"))?;
            BasisFamily::cascade(*head, &tail).map_err(err)
        }
        FamilySpec::Union { parts } => {
            let fams = parts
                .iter()
                .enumerate()
                .map(|(i, p)| build_spec(p, plant_ts, &format!("{path}.parts[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            BasisFamily::block_union(&fams).map_err(err)
        }
        FamilySpec::Raw { m, tau0 } => {
            let m = matrix(m, &format!("{path}.m"))?;
            BasisFamily::new(m, Vector::from_vec(tau0.clone())).map_err(err)
        }
    }
}
