//! Report writers: CSV time series and per-path statistics, JSON reports and
//! the binary trajectory checkpoint.
//!
//! Every text output starts with `#` comment lines carrying the config hash
//! and master seed; the body below them is byte-identical for identical
//! (config, seed). Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::harness::VerdictReport;
use crate::solver::Trajectory;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Provenance stamped on every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub config_hash: String,
    pub master_seed: u64,
}

impl Stamp {
    fn header(&self) -> String {
        format!("# config_sha256 = {}\n# master_seed = {}\n", self.config_hash, self.master_seed)
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub const TIMESERIES_COLUMNS: [&str; 10] =
    ["path", "t", "l2", "lp", "neg_l1", "nu_mass", "psi_energy", "hm1_residual", "eta_hm1", "c1"];

/// Body of the time-series CSV (no header comments).
pub fn timeseries_body(trajectories: &[Trajectory], basis: &crate::basis::Basis) -> String {
    let mut out = TIMESERIES_COLUMNS.join(",");
    out.push('\n');
    for tr in trajectories {
        for s in &tr.samples {
            let eta = basis.norm(&s.eta, crate::basis::Norm::Hm1).unwrap_or(f64::NAN);
            let d = &s.diag;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                tr.trajectory_id,
                num(s.t),
                num(d.l2),
                num(d.lp),
                num(d.neg_l1),
                num(d.nu_mass),
                num(d.psi_energy),
                num(d.hm1_residual),
                num(eta),
                num(s.x.coeffs()[0]),
            );
        }
    }
    out
}

pub fn timeseries_csv(stamp: &Stamp, trajectories: &[Trajectory], basis: &crate::basis::Basis) -> String {
    stamp.header() + &timeseries_body(trajectories, basis)
}

/// Body of the per-path statistics CSV.
pub fn records_body(report: &VerdictReport) -> String {
    let mut out = String::from("experiment,path_id,seed,statistic,value\n");
    for r in &report.records {
        let _ = writeln!(out, "{},{},{},{},{}", report.experiment, r.path_id, r.seed, r.statistic, num(r.value));
    }
    out
}

pub fn records_csv(stamp: &Stamp, report: &VerdictReport) -> String {
    stamp.header() + &records_body(report)
}

/// Two-column `statistic,value` CSV of the report's summary statistics.
pub fn statistics_csv(stamp: &Stamp, report: &VerdictReport) -> String {
    let mut out = stamp.header();
    out.push_str("statistic,value\n");
    for (k, v) in &report.statistics {
        let _ = writeln!(out, "{k},{}", num(*v));
    }
    out
}

/// Strips the leading `#` lines.
pub fn csv_body(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
    }
    rest
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_sha256: &'a str,
    master_seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

pub fn json<T: Serialize>(stamp: &Stamp, body: &T) -> Result<String, OutputError> {
    Ok(serde_json::to_string_pretty(&Stamped { config_sha256: &stamp.config_hash, master_seed: stamp.master_seed, body })?)
}

const MAGIC: &[u8; 8] = b"PRFLCKPT";
const VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub master_seed: u64,
    pub n_modes: u32,
    pub n_grid: u32,
    pub trajectory_id: u64,
    /// `(t, coefficients)` per snapshot.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

/// Layout (little endian): magic[8], version u32, hash[32], seed u64,
/// n_modes u32, n_grid u32, trajectory u64, count u64, then per snapshot
/// `t` followed by `n_modes` coefficients, all f64.
pub fn write_checkpoint(w: &mut impl Write, hash: &[u8; 32], seed: u64, n_grid: usize, tr: &Trajectory) -> Result<(), OutputError> {
    let n_modes = tr.samples.first().map(|s| s.x.len()).unwrap_or(0);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(hash)?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&(n_modes as u32).to_le_bytes())?;
    w.write_all(&(n_grid as u32).to_le_bytes())?;
    w.write_all(&tr.trajectory_id.to_le_bytes())?;
    w.write_all(&(tr.samples.len() as u64).to_le_bytes())?;
    for s in &tr.samples {
        w.write_all(&s.t.to_le_bytes())?;
        for c in s.x.coeffs() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, OutputError> {
    fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], OutputError> {
        let mut b = [0u8; N];
        r.read_exact(&mut b).map_err(|e| OutputError::Checkpoint(format!("truncated: {e}")))?;
        Ok(b)
    }
    if &take::<8>(r)? != MAGIC {
        return Err(OutputError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != VERSION {
        return Err(OutputError::Checkpoint(format!("unsupported version {version}")));
    }
    let config_hash = take::<32>(r)?;
    let master_seed = u64::from_le_bytes(take(r)?);
    let n_modes = u32::from_le_bytes(take(r)?);
    let n_grid = u32::from_le_bytes(take(r)?);
    let trajectory_id = u64::from_le_bytes(take(r)?);
    let count = u64::from_le_bytes(take(r)?);
    let mut snapshots = Vec::new();
    for _ in 0..count {
        let t = f64::from_le_bytes(take(r)?);
        let mut c = Vec::with_capacity(n_modes as usize);
        for _ in 0..n_modes {
            c.push(f64::from_le_bytes(take(r)?));
        }
        snapshots.push((t, c));
    }
    Ok(Checkpoint { config_hash, master_seed, n_modes, n_grid, trajectory_id, snapshots })
}
