//! Command-line front end: `check`, `simulate`, `verify <experiment>` and
//! `ergodic`.
//!
//! Exit codes: 0 pass, 1 verification failure, 2 usage or configuration
//! error, 3 runtime blow-up.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::harness::{self, Experiment, HarnessError, VerdictReport};
use crate::model::{check_psi_growth, check_coercivity, check_phi_bounds};
use crate::noise::{check_noise_integrability, check_noise_summability, NoisePath};
use crate::output::{self, Stamp};
use crate::solver::{Solver, SolverError, Trajectory};
use crate::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "porous-reflect", version, about = "Stochastic porous media equations with reflection: simulation and property checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override `[noise] master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the number of paths.
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Suppress the human-readable summary.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions on Ψ, Φ and the noise.
    Check,
    /// Simulate paths and write time series, checkpoint and summary.
    Simulate,
    /// Run one experiment and write its verdict.
    Verify {
        /// comparison, l1_contraction, energy_ito, moment_bounds,
        /// penalty_limit, complementarity, vague_convergence,
        /// resolvent_limit, markov_semigroup or ergodic
        experiment: String,
    },
    /// Long-horizon run: time averages, autocorrelation and coupled decay.
    Ergodic,
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Harness(HarnessError::Solver(e)) | Error::Solver(e) => solver_exit(e),
            Error::Output(_) | Error::Io(_) | Error::Config(_) | Error::Usage(_) => EXIT_USAGE,
            Error::Harness(_) => EXIT_USAGE,
        }
    }
}

fn solver_exit(e: &SolverError) -> i32 {
    match e {
        SolverError::BlowUp { .. } | SolverError::NewtonFailed { .. } => EXIT_BLOWUP,
        _ => EXIT_USAGE,
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn load_config(path: &Path, seed: Option<u64>, paths: Option<usize>) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.model.noise.seed = s;
    }
    if let Some(p) = paths {
        if p == 0 {
            return Err(Error::Usage("--paths must be >= 1".into()));
        }
        cfg.n_paths = p;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Error> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("porous-out"));
    fs::create_dir_all(&dir).map_err(|e| Error::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(&path, contents).map_err(|e| Error::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Usage("--config <path> is required".into()))?;
    let cfg = load_config(path, cli.seed, cli.paths)?;
    match &cli.command {
        Command::Check => cmd_check(cli, &cfg),
        Command::Simulate => cmd_simulate(cli, &cfg),
        Command::Verify { experiment } => {
            let exp: Experiment = experiment.parse().map_err(Error::Usage)?;
            cmd_verify(cli, &cfg, exp)
        }
        Command::Ergodic => cmd_verify(cli, &cfg, Experiment::Ergodic),
    }
}

fn stamp(cfg: &RunConfig) -> Stamp {
    Stamp { config_hash: cfg.hash(), master_seed: cfg.seed() }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub assumption: String,
    pub estimate: String,
    pub holds: bool,
}

/// Evaluates every structural assumption for `cfg`.
pub fn assumption_report(cfg: &RunConfig) -> Result<Vec<CheckLine>, Error> {
    let basis = cfg.basis.build().map_err(|e| Error::Usage(e.to_string()))?;
    let psi = &cfg.model.psi;
    let phi = &cfg.model.phi;
    let noise = &cfg.model.noise;
    let growth = check_psi_growth(psi, (-10.0, 10.0), 801);
    let coercive = check_coercivity(psi, phi, &basis, 64, cfg.seed());
    let summable = check_noise_summability(noise, psi.r, 100_000);
    let integrable = check_noise_integrability(noise, psi.r, cfg.solver.t_end, 256);
    let bounds = check_phi_bounds(phi, &basis, 64, cfg.seed());
    let integral_last = integrable.lp_integral_partial.last().map(|v| v.1).unwrap_or(0.0);
    let sum_last = summable.partial_sums.last().map(|v| v.1).unwrap_or(0.0);
    Ok(vec![
        CheckLine {
            assumption: "psi_growth".into(),
            estimate: format!("c1={:.4e} c1'={:.4e} c2={:.4e} violations={}", growth.c1_est, growth.c1_prime_est, growth.c2_est, growth.violations.len()),
            holds: growth.holds(),
        },
        CheckLine { assumption: "coercivity".into(), estimate: format!("c1={:.4e} c2={:.4e}", coercive.c1_est, coercive.c2_est), holds: coercive.holds },
        CheckLine {
            assumption: "noise_sum".into(),
            estimate: format!("exponent={:.4} partial_sum={:.6e} tail_power={:.4}", summable.exponent, sum_last, summable.tail_power),
            holds: summable.converged,
        },
        CheckLine { assumption: "noise_lp".into(), estimate: format!("hs_norm={:.4e} integral={:.6e}", integrable.hs_norm, integral_last), holds: integrable.bounded },
        CheckLine {
            assumption: "phi_bounds".into(),
            estimate: format!("l0={:.4e} K={:.4e} sampled_K={:.4e}", bounds.declared_lipschitz, bounds.declared_k, bounds.k_est),
            holds: bounds.holds,
        },
    ])
}

fn cmd_check(cli: &Cli, cfg: &RunConfig) -> Result<i32, Error> {
    let lines = assumption_report(cfg)?;
    if !cli.quiet {
        println!("{:<11} {:<8} estimate", "check", "verdict");
        for l in &lines {
            println!("{:<11} {:<8} {}", l.assumption, if l.holds { "holds" } else { "FAILS" }, l.estimate);
        }
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))?;
        write(dir.join("check.json"), output::json(&stamp(cfg), &serde_json::json!({ "checks": lines }))?)?;
    }
    Ok(if lines.iter().all(|l| l.holds) { EXIT_PASS } else { EXIT_FAIL })
}

#[derive(Debug, Serialize)]
struct PathSummary {
    path: u64,
    t_final: f64,
    l2: f64,
    lp: f64,
    neg_l1: f64,
    nu_mass: f64,
    hm1_residual: f64,
    max_eta_step_hm1: f64,
    pairing_total: f64,
    energy_residual: f64,
}

fn summarize(tr: &Trajectory) -> PathSummary {
    let last = tr.last();
    PathSummary {
        path: tr.trajectory_id,
        t_final: last.t,
        l2: last.diag.l2,
        lp: last.diag.lp,
        neg_l1: last.diag.neg_l1,
        nu_mass: last.diag.nu_mass,
        hm1_residual: last.diag.hm1_residual,
        max_eta_step_hm1: tr.ledger.max_increment_hm1,
        pairing_total: tr.ledger.pairing_total,
        energy_residual: tr.integrals.energy_residual(tr.first().diag.l2, last.diag.l2),
    }
}

/// Simulates `n` paths; on blow-up returns the completed paths, the partial
/// path and the error.
pub fn simulate_paths(cfg: &RunConfig, n: usize) -> Result<(Vec<Trajectory>, Option<String>), Error> {
    let basis = cfg.basis.build().map_err(|e| Error::Usage(e.to_string()))?;
    let solver = Solver::new(&basis, cfg.model.clone(), cfg.solver.clone())?;
    let x0 = cfg.x0.build(&basis, cfg.clip_initial)?;
    let mut out = Vec::new();
    for p in 0..n as u64 {
        let noise = NoisePath::new(&cfg.model.noise, basis.n_modes(), p, cfg.solver.dt, 1).map_err(SolverError::from)?;
        match solver.simulate(&x0, &noise) {
            Ok(tr) => out.push(tr),
            Err(SolverError::BlowUp { t, step, last_l2, partial }) => {
                out.push(*partial);
                let msg = format!("path {p} blew up at t={t} (step {step}, last ‖X‖₂={last_l2:.3e})");
                return Ok((out, Some(msg)));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out, None))
}

fn cmd_simulate(cli: &Cli, cfg: &RunConfig) -> Result<i32, Error> {
    let dir = out_dir(cli)?;
    let basis = cfg.basis.build().map_err(|e| Error::Usage(e.to_string()))?;
    let n = cli.paths.unwrap_or(1);
    {
        let solver = Solver::new(&basis, cfg.model.clone(), cfg.solver.clone())?;
        let x0 = cfg.x0.build(&basis, cfg.clip_initial)?;
        for w in solver.warnings(&x0) {
            eprintln!("warning: {w}");
        }
    }
    let (trajs, failure) = simulate_paths(cfg, n)?;
    let st = stamp(cfg);
    write(dir.join("timeseries.csv"), output::timeseries_csv(&st, &trajs, &basis))?;
    {
        let mut f = fs::File::create(dir.join("checkpoint.bin")).map_err(|e| Error::Usage(format!("cannot write checkpoint: {e}")))?;
        let hash = cfg.hash_bytes();
        for tr in &trajs {
            output::write_checkpoint(&mut f, &hash, cfg.seed(), basis.n_grid(), tr)?;
        }
    }
    let summary = serde_json::json!({
        "scheme": cfg.solver.scheme.to_string(),
        "paths": trajs.iter().map(summarize).collect::<Vec<_>>(),
        "blow_up": failure,
    });
    write(dir.join("summary.json"), output::json(&st, &summary)?)?;
    if let Some(e) = &summary["blow_up"].as_str() {
        eprintln!("error: {e}");
        return Ok(EXIT_BLOWUP);
    }
    if !cli.quiet {
        for tr in &trajs {
            let s = summarize(tr);
            println!(
                "path {}: t={} ‖X‖₂={:.6e} ‖X⁻‖₁={:.3e} ν(E)={:.6e} R={:.2e}",
                s.path, s.t_final, s.l2, s.neg_l1, s.nu_mass, s.hm1_residual
            );
        }
        println!("wrote {}", dir.display());
    }
    Ok(EXIT_PASS)
}

/// Prints the one-line-per-criterion summary of a report.
pub fn print_report(report: &VerdictReport) {
    println!("{} ({} paths, seed {}, {:.1}s)", report.experiment, report.n_paths, report.master_seed, report.wall_clock_s);
    for c in &report.criteria {
        let se = c.se.map(|s| format!(" se={s:.3e}")).unwrap_or_default();
        println!(
            "  {} {:<36} value={:.6e} threshold={:.6e}{se}  {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.note
        );
    }
    for w in &report.warnings {
        println!("  warning: {w}");
    }
}

fn cmd_verify(cli: &Cli, cfg: &RunConfig, exp: Experiment) -> Result<i32, Error> {
    let dir = out_dir(cli)?;
    let spec = cfg.experiment_spec(exp);
    let report = harness::run(&spec)?;
    let st = stamp(cfg);
    write(dir.join(format!("{exp}_report.json")), output::json(&st, &report)?)?;
    write(dir.join(format!("{exp}_paths.csv")), output::records_csv(&st, &report))?;
    if exp == Experiment::Ergodic {
        write(dir.join("stationary.csv"), output::statistics_csv(&st, &report))?;
    }
    if !cli.quiet {
        print_report(&report);
    }
    Ok(if report.pass() { EXIT_PASS } else { EXIT_FAIL })
}
