use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shiftmpc"))
}

fn shiftmpc(config: &Path, out: &Path, sub: &str) -> Output {
    bin()
        .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "1", sub])
        .output()
        .unwrap()
}

fn artifacts(o: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout.lines().find_map(|l| l.strip_prefix("artifacts: ")).expect("artifact line");
    PathBuf::from(line)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const QUAD: &str = r#"
seed = 4
[plant]
kind = "quadruple_integrator"
[family.spec]
kind = "laguerre"
s = 8
nu = 0.8
[run]
record_wall_time = false
"#;

#[test]
fn run_writes_one_row_per_step_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("quad.toml");
    fs::write(&cfg, QUAD).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "run");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = artifacts(&o);
    let log = fs::read_to_string(dir.join("log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,x0,x1,x2,x3,u0,cost_to_go,stage_cost,feasible,converged,iterations,status,violation,wall_time_us"
    );
    assert_eq!(lines.count(), 2000);
    let summary = json(&dir.join("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["kind"], "run_summary");
    assert_eq!(summary["summary"]["converged"], true);
    assert_eq!(summary["summary"]["lyapunov"]["violations"], 0);

    // the resolved config reproduces the run exactly
    let again = shiftmpc(&dir.join("config.toml"), tmp.path(), "run");
    assert!(again.status.success());
    let dir2 = artifacts(&again);
    assert_ne!(dir, dir2);
    assert_eq!(log, fs::read_to_string(dir2.join("log.csv")).unwrap());
    assert_eq!(
        fs::read_to_string(dir.join("config.toml")).unwrap(),
        fs::read_to_string(dir2.join("config.toml")).unwrap()
    );
}

#[test]
fn malformed_config_exits_with_two_and_the_key_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, QUAD.replace("[run]", "[run]\nsteps = \"many\"")).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "run");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run.steps"), "{err}");

    fs::write(&cfg, QUAD.replace("seed = 4", "seed = 4\ncolour = 1")).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "nmax");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    // semantic errors too
    fs::write(&cfg, QUAD.replace("nu = 0.8", "nu = 0.0")).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "basis-inspect");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("family.spec"));
}

#[test]
fn missing_config_file_is_an_io_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = shiftmpc(&tmp.path().join("absent.toml"), tmp.path(), "run");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn capped_nmax_exits_with_three_and_writes_the_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cap.toml");
    fs::write(&cfg, format!("{QUAD}\n[nmax]\nstart = \"zero\"\nj_cap = 10\n")).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "nmax");
    assert_eq!(o.status.code(), Some(3));
    let dir = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir() && p.file_name().unwrap().to_string_lossy().starts_with("nmax-"))
        .unwrap();
    let cert = json(&dir.join("nmax.json"));
    assert_eq!(cert["kind"], "nmax_certificate");
    assert_eq!(cert["status"], "cap_reached");
    assert_eq!(cert["j_cap"], 10);
}

#[test]
fn nmax_certificate_for_the_classic_basis() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("classic.toml");
    fs::write(&cfg, QUAD.replace("kind = \"laguerre\"\ns = 8\nnu = 0.8", "kind = \"classic\"\ns = 6")).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "nmax");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cert = json(&artifacts(&o).join("nmax.json"));
    assert_eq!(cert["status"], "certified");
    // (n + m)·s, certified on the first iteration
    assert_eq!(cert["nmax"], 30);
    assert_eq!(cert["iterations"], 1);
    assert_eq!(cert["family_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn basis_inspect_reports_radius_and_conditioning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("b.toml");
    fs::write(&cfg, QUAD).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "basis-inspect");
    assert!(o.status.success());
    let report = json(&artifacts(&o).join("basis.json"));
    let rho = report["spectral_radius"].as_f64().unwrap();
    assert!((rho - (-0.8f64 * 0.02).exp()).abs() < 1e-9, "{rho}");
    assert_eq!(report["a1"], true);
    assert_eq!(report["a2"], true);

    fs::write(&cfg, QUAD.replace("kind = \"laguerre\"\ns = 8\nnu = 0.8", "kind = \"classic\"\ns = 12")).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "basis-inspect");
    let report = json(&artifacts(&o).join("basis.json"));
    assert_eq!(report["spectral_radius"].as_f64().unwrap(), 0.0);
    assert!((report["gram_condition"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(report["decay_samples"], 12);
}

#[test]
fn nu_sweep_table_has_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("nu.toml");
    let values: Vec<String> = (5..=20).map(|i| format!("{:.1}", i as f64 / 10.0)).collect();
    fs::write(
        &cfg,
        format!("{QUAD}\n[sweep]\nkind = \"nu\"\nvalues = [{}]\ns = 8\nics = 2\nsteps = 20\n", values.join(", ")),
    )
    .unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "sweep");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = artifacts(&o);
    let table = fs::read_to_string(dir.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "nu,nmax,feasible,infeasible,mean_cost,mean_iterations,lyapunov_violations");
    assert_eq!(lines.count(), 16);
    assert_eq!(json(&dir.join("summary.json"))["rows"].as_array().unwrap().len(), 16);
}

#[test]
fn robustness_sweep_reports_success_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("rob.toml");
    fs::write(
        &cfg,
        r#"
[plant]
kind = "pendulum"
[family]
orthonormalize = true
[family.spec]
kind = "cascade"
head = 12
[family.spec.tail]
kind = "laguerre"
s = 7
nu = 14.0
[nmax]
value = 34
[sweep]
kind = "robustness"
amplitudes = [0.0, 1.0]
runs = 2
steps = 20
"#,
    )
    .unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "sweep");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(artifacts(&o).join("table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert!(rows[0].starts_with("n_max,runs,successes,success_rate"));
    assert_eq!(rows.len(), 3);
    // 20 steps is too short to hold the upright position
    assert!(rows[1].starts_with("0.0,1,0,0.0"), "{}", rows[1]);
    assert!(rows[2].starts_with("1.0,2,"), "{}", rows[2]);
}

#[test]
fn schema_is_published() {
    let o = bin().arg("schema").output().unwrap();
    assert!(o.status.success());
    let schema: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for key in ["plant", "family", "nmax", "run", "sweep", "disturbance", "seed"] {
        assert!(props.contains_key(key), "{key}");
    }
    assert_eq!(schema["additionalProperties"], false);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("quad.toml");
    fs::write(&cfg, QUAD.replace("[run]", "[run]\nsteps = 3")).unwrap();
    let o = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--seed", "77", "run"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let resolved = fs::read_to_string(artifacts(&o).join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 77"));
}

const PENDULUM: &str = r#"
[plant]
kind = "pendulum"
[family]
orthonormalize = true
[family.spec]
kind = "cascade"
head = 12
[family.spec.tail]
kind = "laguerre"
s = 7
nu = 14.0
[nmax]
value = 34
[run]
steps = 40
record_wall_time = false
"#;

#[test]
fn input_only_guess_file_reproduces_the_built_in_guess() {
    use shiftmpc_core::nonlinear::{swing_up_guess, CartPendulum, GuessOptions, PendulumParams};
    use shiftmpc_core::{Matrix, Vector};

    let tmp = tempfile::tempdir().unwrap();
    let plant = CartPendulum::new(PendulumParams::default(), 0.02).unwrap();
    let opts = GuessOptions {
        u_max: 24.0,
        q: Matrix::from_diagonal(&Vector::from_vec(vec![20.0, 2.0, 50.0, 2.0])),
        r: Matrix::from_element(1, 1, 10.0),
        ..GuessOptions::default()
    };
    let guess = swing_up_guess(&plant, &CartPendulum::hanging(), &opts).unwrap();
    let mut csv = String::from("u0\n");
    for u in guess.inputs.iter() {
        csv.push_str(&format!("{u:e}\n"));
    }
    let guess_path = tmp.path().join("guess.csv");
    fs::write(&guess_path, csv).unwrap();

    let cfg = tmp.path().join("p.toml");
    fs::write(&cfg, PENDULUM).unwrap();
    let base = shiftmpc(&cfg, tmp.path(), "run");
    assert!(base.status.success(), "{}", String::from_utf8_lossy(&base.stderr));
    let with_guess = PENDULUM.replace("[run]", &format!("[controller]\ninitial_guess = {:?}\n[run]", guess_path.to_str().unwrap()));
    fs::write(&cfg, with_guess).unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "run");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(artifacts(&base).join("log.csv")).unwrap();
    let b = fs::read_to_string(artifacts(&o).join("log.csv")).unwrap();
    assert_eq!(a, b);

    fs::write(&guess_path, "v0\n1.0\n").unwrap();
    let o = shiftmpc(&cfg, tmp.path(), "run");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("u0"));
}
