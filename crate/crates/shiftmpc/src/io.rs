//! CSV logs, JSON summaries and the `N_max` certificate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use shiftmpc_core::admissible::{AffineConstraintSet, NmaxError, NmaxIteration, NmaxResult};
use shiftmpc_core::basis::BasisFamily;
use shiftmpc_core::Matrix;

use crate::harness::ClosedLoopLog;

/// Version of every JSON document written here.
pub const SCHEMA_VERSION: u32 = 1;

/// Creates `parent/<label>-<UTC timestamp>`, with a numeric suffix on collision.
pub fn create_run_dir(parent: &Path, label: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(parent)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = parent.join(format!("{label}-{stamp}"));
    let mut dir = base.clone();
    let mut i = 1;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = PathBuf::from(format!("{}-{i}", base.display()));
                i += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Header of the per-step log: `k, x0..x{n-1}, u0..u{m-1}` and the record fields.
pub fn log_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..m).map(|i| format!("u{i}")));
    for c in ["cost_to_go", "stage_cost", "feasible", "converged", "iterations", "status", "violation", "wall_time_us"] {
        h.push(c.to_string());
    }
    h
}

pub fn write_log_csv(path: &Path, log: &ClosedLoopLog) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    let n = log.final_state.len();
    let m = log.records.first().map_or(0, |r| r.u.len());
    w.write_record(log_header(n, m))?;
    for r in &log.records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.x.iter().map(|v| format!("{v:e}")));
        row.extend(r.u.iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", r.cost_to_go));
        row.push(format!("{:e}", r.stage_cost));
        row.push(r.feasible.to_string());
        row.push(r.converged.to_string());
        row.push(r.iterations.to_string());
        row.push(r.status.to_string());
        row.push(format!("{:e}", r.violation));
        row.push(r.wall_time_us.map_or(String::new(), |t| format!("{t:.1}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Initial guess read from CSV: one row per sample, columns `u0..` and
/// optionally `x0..`. Returns `(inputs m × K, states n × K)` when present.
pub fn read_guess_csv(path: &Path, n: usize, m: usize) -> Result<(Matrix, Option<Matrix>), GuessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let find = |name: String| header.iter().position(|h| h.trim() == name);
    let u_cols: Vec<usize> = (0..m)
        .map(|i| find(format!("u{i}")).ok_or(GuessError::MissingColumn(format!("u{i}"))))
        .collect::<Result<_, _>>()?;
    let x_cols: Vec<Option<usize>> = (0..n).map(|i| find(format!("x{i}"))).collect();
    let with_states = match x_cols.iter().filter(|c| c.is_some()).count() {
        0 => false,
        c if c == n => true,
        _ => return Err(GuessError::MissingColumn("x0.. (all or none)".into())),
    };
    let mut u = Vec::new();
    let mut x = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| -> Result<f64, GuessError> {
            rec.get(c)
                .and_then(|v| v.trim().parse().ok())
                .filter(|v: &f64| v.is_finite())
                .ok_or(GuessError::BadValue { row: line + 1, column: header[c].to_string() })
        };
        for &c in &u_cols {
            u.push(cell(c)?);
        }
        if with_states {
            for c in x_cols.iter().flatten() {
                x.push(cell(*c)?);
            }
        }
    }
    let k = u.len() / m.max(1);
    if k == 0 {
        return Err(GuessError::Empty);
    }
    let inputs = Matrix::from_column_slice(m, k, &u);
    Ok((inputs, with_states.then(|| Matrix::from_column_slice(n, k, &x))))
}

#[derive(Debug, thiserror::Error)]
pub enum GuessError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("initial guess lacks column {0}")]
    MissingColumn(String),
    #[error("initial guess row {row}, column {column}: not a finite number")]
    BadValue { row: usize, column: String },
    #[error("initial guess has no rows")]
    Empty,
}

pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Wraps `body` as `{"schema_version": 1, "kind": kind, ...body}`.
pub fn write_json<T: Serialize>(path: &Path, kind: &str, body: &T) -> std::io::Result<()> {
    let mut v = serde_json::to_value(body).map_err(std::io::Error::other)?;
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), SCHEMA_VERSION.into());
    doc.insert("kind".into(), kind.into());
    match v.as_object_mut() {
        Some(obj) => doc.append(obj),
        None => {
            doc.insert("data".into(), v);
        }
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &doc).map_err(std::io::Error::other)?;
    f.write_all(b"\n")
}

/// SHA-256 over the dimension, `M` (row-major) and `τ(0)` as little-endian `f64`.
pub fn family_hash(family: &BasisFamily) -> String {
    let mut h = Sha256::new();
    h.update(b"shiftmpc-family-v1");
    h.update((family.dim() as u64).to_le_bytes());
    let m = family.shift_matrix();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            h.update(m[(i, j)].to_le_bytes());
        }
    }
    for v in family.tau0().iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub j: usize,
    /// `J_i` per constraint row; `null` marks an LP without finite value.
    pub values: Vec<Option<f64>>,
}

impl From<&NmaxIteration> for CertificateRow {
    fn from(it: &NmaxIteration) -> Self {
        Self {
            j: it.j,
            values: it.values.iter().map(|v| v.is_finite().then_some(*v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NmaxCertificate {
    pub status: &'static str,
    pub family_sha256: String,
    pub s: usize,
    pub spectral_radius: f64,
    pub states: usize,
    pub inputs: usize,
    pub constraints: usize,
    pub nmax: Option<usize>,
    pub start: Option<usize>,
    pub j_cap: Option<usize>,
    pub iterations: usize,
    pub tol: Option<f64>,
    pub certificates: Vec<f64>,
    pub table: Vec<CertificateRow>,
    pub coupled: bool,
}

impl NmaxCertificate {
    pub fn new(family: &BasisFamily, cons: &AffineConstraintSet, coupled: bool, result: &Result<NmaxResult, NmaxError>) -> Self {
        let mut c = NmaxCertificate {
            status: "certified",
            family_sha256: family_hash(family),
            s: family.dim(),
            spectral_radius: family.spectral_radius(),
            states: cons.num_states(),
            inputs: cons.num_inputs(),
            constraints: cons.num_constraints(),
            nmax: None,
            start: None,
            j_cap: None,
            iterations: 0,
            tol: None,
            certificates: Vec::new(),
            table: Vec::new(),
            coupled,
        };
        match result {
            Ok(r) => {
                c.nmax = Some(r.nmax);
                c.start = Some(r.start);
                c.iterations = r.iterations;
                c.tol = Some(r.tol);
                c.certificates = r.certificates.clone();
                c.table = r.table.iter().map(Into::into).collect();
            }
            Err(NmaxError::CapReached { j_cap, table }) => {
                c.status = "cap_reached";
                c.j_cap = Some(*j_cap);
                c.iterations = table.len();
                c.table = table.iter().map(Into::into).collect();
            }
            Err(NmaxError::LpFailed { .. }) => c.status = "lp_failed",
            Err(NmaxError::Invalid(_)) => c.status = "invalid",
        }
        c
    }
}
