//! Monte Carlo experiments that check the solution theory numerically.
//!
//! Every experiment is a pure function of its [`ExperimentSpec`] (the master
//! seed lives in the noise spec): paths are fanned out to the rayon pool and
//! collected in path order, and all reductions run sequentially afterwards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{lp_power, Basis, BasisError, GridField, SpectralField, Spectrum};
use crate::model::{check_phi_bounds, PhiKind};
use crate::noise::{NoiseError, NoisePath};
use crate::solver::{simulate_coupled, InitialCondition, Model, Scheme, Snapshot, Solver, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Comparison,
    L1Contraction,
    EnergyIto,
    MomentBounds,
    PenaltyLimit,
    Complementarity,
    VagueConvergence,
    ResolventLimit,
    MarkovSemigroup,
    Ergodic,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Comparison,
        Experiment::L1Contraction,
        Experiment::EnergyIto,
        Experiment::MomentBounds,
        Experiment::PenaltyLimit,
        Experiment::Complementarity,
        Experiment::VagueConvergence,
        Experiment::ResolventLimit,
        Experiment::MarkovSemigroup,
        Experiment::Ergodic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Comparison => "comparison",
            Experiment::L1Contraction => "l1_contraction",
            Experiment::EnergyIto => "energy_ito",
            Experiment::MomentBounds => "moment_bounds",
            Experiment::PenaltyLimit => "penalty_limit",
            Experiment::Complementarity => "complementarity",
            Experiment::VagueConvergence => "vague_convergence",
            Experiment::ResolventLimit => "resolvent_limit",
            Experiment::MarkovSemigroup => "markov_semigroup",
            Experiment::Ergodic => "ergodic",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub n_modes: usize,
    pub n_grid: usize,
    pub spectrum: Spectrum,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { n_modes: 32, n_grid: 129, spectrum: Spectrum::Continuum }
    }
}

impl BasisSpec {
    pub fn build(&self) -> Result<Basis, BasisError> {
        Basis::with_spectrum(self.n_modes, self.n_grid, self.spectrum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub penalty_levels: Vec<f64>,
    pub eps_levels: Vec<f64>,
    /// Comparison uses the lower drift `Φ − phi_shift`.
    pub phi_shift: f64,
    pub markov_s: f64,
    pub markov_t: f64,
    pub burn_in: f64,
    pub decay_horizon: f64,
    pub batches: usize,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            penalty_levels: vec![10.0, 1e2, 1e3, 1e4],
            eps_levels: vec![1e-1, 1e-2, 1e-3],
            phi_shift: 1.0,
            markov_s: 0.25,
            markov_t: 0.25,
            burn_in: 5.0,
            decay_horizon: 5.0,
            batches: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub pathwise: f64,
    pub contraction_ratio: f64,
    pub balance: f64,
    pub moment_factor: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub complementarity: f64,
    pub resolvent_final: f64,
    pub oracle: f64,
    pub se_factor: f64,
    pub ou_rel: f64,
    pub decay_margin: f64,
    pub energy_abs: f64,
    pub cauchy_shrink: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pathwise: 1e-6,
            contraction_ratio: 1.05,
            balance: 1e-8,
            moment_factor: 3.0,
            slope_lo: -1.3,
            slope_hi: -0.7,
            complementarity: 0.01,
            resolvent_final: 0.1,
            oracle: 1e-6,
            se_factor: 3.0,
            ou_rel: 0.1,
            decay_margin: 0.2,
            energy_abs: 1e-3,
            cauchy_shrink: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub n_paths: usize,
    pub basis: BasisSpec,
    pub model: Model,
    pub solver: SolverConfig,
    pub x0: InitialCondition,
    /// Second initial condition (lower start, contraction partner, second start).
    pub y0: Option<InitialCondition>,
    /// Clip initial data to its positive part on the grid.
    pub clip_initial: bool,
    pub params: ExperimentParams,
    pub tol: Tolerances,
}

impl ExperimentSpec {
    pub fn master_seed(&self) -> u64 {
        self.model.noise.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    pub se: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: u64,
    pub seed: u64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub experiment: Experiment,
    pub n_paths: usize,
    pub master_seed: u64,
    pub criteria: Vec<Criterion>,
    pub statistics: BTreeMap<String, f64>,
    pub records: Vec<PathRecord>,
    pub warnings: Vec<String>,
    pub wall_clock_s: f64,
}

impl VerdictReport {
    fn new(spec: &ExperimentSpec) -> Self {
        VerdictReport {
            experiment: spec.experiment,
            n_paths: spec.n_paths,
            master_seed: spec.master_seed(),
            criteria: Vec::new(),
            statistics: BTreeMap::new(),
            records: Vec::new(),
            warnings: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    fn check(&mut self, name: &str, value: f64, threshold: f64, pass: bool, se: Option<f64>, note: impl Into<String>) {
        self.criteria.push(Criterion { name: name.into(), value, threshold, pass, se, note: note.into() });
    }

    fn stat(&mut self, name: impl Into<String>, value: f64) {
        self.statistics.insert(name.into(), value);
    }

    fn record(&mut self, path_id: u64, statistic: impl Into<String>, value: f64) {
        let seed = self.master_seed;
        self.records.push(PathRecord { path_id, seed, statistic: statistic.into(), value });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn estimate(v: &[f64]) -> Estimate {
    let n = v.len();
    if n == 0 {
        return Estimate { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Estimate { mean, se, n }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Means of `batches` contiguous blocks; the remainder is dropped.
pub fn batch_means(series: &[f64], batches: usize) -> Vec<f64> {
    let len = series.len() / batches.max(1);
    if len == 0 {
        return Vec::new();
    }
    series.chunks_exact(len).take(batches).map(|c| c.iter().sum::<f64>() / len as f64).collect()
}

/// Runs `f` for path ids `0..n` on the worker pool, results in path order.
fn per_path<T: Send>(n: usize, f: impl Fn(u64) -> Result<T, HarnessError> + Sync + Send) -> Result<Vec<T>, HarnessError> {
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Solver settings for observer-driven runs: only endpoints are recorded.
fn run_cfg(cfg: &SolverConfig, t_end: f64) -> SolverConfig {
    let steps = (t_end / cfg.dt).round().max(1.0) as usize;
    SolverConfig { t_end, record_every: steps, ..cfg.clone() }
}

fn path_noise(spec: &ExperimentSpec, basis: &Basis, stream: u64, dt: f64) -> Result<NoisePath, HarnessError> {
    Ok(NoisePath::new(&spec.model.noise, basis.n_modes(), stream, dt, 1)?)
}

fn grid_l1(h: f64, a: &[f64], b: &[f64]) -> f64 {
    h * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn initial_pair(spec: &ExperimentSpec, basis: &Basis) -> Result<(SpectralField, SpectralField), HarnessError> {
    let x0 = spec.x0.build(basis, spec.clip_initial)?;
    let y0 = spec.y0.as_ref().unwrap_or(&spec.x0).build(basis, spec.clip_initial)?;
    Ok((x0, y0))
}

/// Lipschitz observables shared by the Markov and ergodic experiments:
/// `min(‖u‖₁, 1)`, `∫u sin(πx)dμ`, `∫_{x≤1/2} u⁺ dμ`.
pub fn observables(basis: &Basis, grid: &GridField) -> [f64; 3] {
    let h = basis.h();
    let mut l1 = 0.0;
    let mut proj = 0.0;
    let mut left = 0.0;
    for (x, u) in basis.nodes().zip(grid.values()) {
        l1 += u.abs();
        proj += u * (std::f64::consts::PI * x).sin();
        if x <= 0.5 {
            left += u.max(0.0);
        }
    }
    [(h * l1).min(1.0), h * proj, h * left]
}

const OBSERVABLE_NAMES: [&str; 3] = ["l1_capped", "first_mode_projection", "left_positive_mass"];

pub fn run(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    if spec.n_paths == 0 {
        return Err(HarnessError::Precondition("n_paths must be >= 1".into()));
    }
    let start = Instant::now();
    let mut report = match spec.experiment {
        Experiment::Comparison => run_comparison(spec),
        Experiment::L1Contraction => run_l1_contraction(spec),
        Experiment::EnergyIto => run_energy_ito(spec),
        Experiment::MomentBounds => run_moment_bounds(spec),
        Experiment::PenaltyLimit => run_penalty_limit(spec),
        Experiment::Complementarity => run_complementarity(spec),
        Experiment::VagueConvergence => run_vague_convergence(spec),
        Experiment::ResolventLimit => run_resolvent_limit(spec),
        Experiment::MarkovSemigroup => run_markov_semigroup(spec),
        Experiment::Ergodic => run_ergodic(spec),
    }?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Pathwise ordering under a lowered drift and lowered initial data.
pub fn run_comparison(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let basis = spec.basis.build()?;
    let (upper_x0, lower_x0) = initial_pair(spec, &basis)?;
    let gu = basis.to_grid(&upper_x0)?;
    let gl = basis.to_grid(&lower_x0)?;
    if gl.values().iter().zip(gu.values()).any(|(l, u)| l > &(u + 1e-12)) {
        return Err(HarnessError::Precondition("lower initial condition exceeds the upper one".into()));
    }
    let shift = spec.params.phi_shift;
    let phi_low = spec.model.phi.shifted(shift);
    let unordered = (0..=2000)
        .map(|i| -10.0 + 0.01 * i as f64)
        .any(|s| phi_low.eval(s) > spec.model.phi.eval(s) + 1e-14 * (1.0 + s.abs()));
    if unordered {
        return Err(HarnessError::Precondition("lower drift exceeds the upper drift".into()));
    }
    let cfg = run_cfg(&spec.solver, spec.solver.t_end);
    let upper = Solver::new(&basis, spec.model.clone(), cfg.clone())?;
    let lower = Solver::new(&basis, spec.model.with_phi(phi_low), cfg.clone())?;
    let tol = spec.tol.pathwise;
    let per = per_path(spec.n_paths, |p| {
        let noise = path_noise(spec, &basis, p, cfg.dt)?;
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        simulate_coupled(&[&upper, &lower], &[upper_x0.clone(), lower_x0.clone()], &noise, |s| {
            for (u, l) in s[0].grid.values().iter().zip(s[1].grid.values()) {
                worst = worst.max(l - u);
                scale = scale.max(u.abs()).max(l.abs());
            }
        })?;
        Ok((worst, scale))
    })?;
    let mut report = VerdictReport::new(spec);
    report.warnings.extend(upper.warnings(&upper_x0));
    let mut exceed = 0usize;
    let mut max_violation = 0.0f64;
    let mut max_scale = 1.0f64;
    for (p, (worst, scale)) in per.iter().enumerate() {
        report.record(p as u64, "max_violation", *worst);
        report.record(p as u64, "field_scale", *scale);
        if *worst > tol * scale {
            exceed += 1;
        }
        max_violation = max_violation.max(*worst);
        max_scale = max_scale.max(*scale);
    }
    report.stat("max_violation", max_violation);
    report.stat("max_field_scale", max_scale);
    report.stat("fraction_exceeding", exceed as f64 / spec.n_paths as f64);
    report.check(
        "ordering_preserved",
        max_violation,
        tol * max_scale,
        exceed == 0,
        None,
        "max over paths, steps and nodes of (lower - upper)+",
    );
    Ok(report)
}

/// Coupled `L¹` distance against `e^{Kt}‖x−y‖₁`.
pub fn run_l1_contraction(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let basis = spec.basis.build()?;
    let (x0, y0) = initial_pair(spec, &basis)?;
    let gx = basis.to_grid(&x0)?;
    let gy = basis.to_grid(&y0)?;
    let d0 = grid_l1(basis.h(), gx.values(), gy.values());
    if d0 <= 0.0 {
        return Err(HarnessError::Precondition("contraction needs distinct initial conditions".into()));
    }
    let bounds = check_phi_bounds(&spec.model.phi, &basis, 64, spec.master_seed());
    if !bounds.holds {
        return Err(HarnessError::Precondition(format!(
            "drift fails the one-sided bound: sampled K {} > declared {}",
            bounds.k_est, bounds.declared_k
        )));
    }
    let k = spec.model.phi.one_sided();
    let cfg = run_cfg(&spec.solver, spec.solver.t_end);
    let solver = Solver::new(&basis, spec.model.clone(), cfg.clone())?;
    let h = basis.h();
    let per = per_path(spec.n_paths, |p| {
        let noise = path_noise(spec, &basis, p, cfg.dt)?;
        let mut sup = 0.0f64;
        simulate_coupled(&[&solver, &solver], &[x0.clone(), y0.clone()], &noise, |s| {
            let d = grid_l1(h, s[0].grid.values(), s[1].grid.values());
            sup = sup.max(d / ((k * s[0].t).exp() * d0));
        })?;
        Ok(sup)
    })?;
    let mut report = VerdictReport::new(spec);
    report.warnings.extend(solver.warnings(&x0));
    for (p, r) in per.iter().enumerate() {
        report.record(p as u64, "sup_ratio", *r);
    }
    let sup = per.iter().copied().fold(0.0, f64::max);
    report.stat("K", k);
    report.stat("initial_distance", d0);
    report.stat("sup_ratio", sup);
    report.stat("mean_sup_ratio", estimate(&per).mean);
    let tol = spec.tol.contraction_ratio;
    report.check("contraction_ratio", sup, tol, sup <= tol, None, "sup_t ‖X(x)−X(y)‖₁ / (e^{Kt}‖x−y‖₁) over all paths");
    Ok(report)
}

/// Residual of the discrete Itô formula for `‖X_t‖²` and its dt-halving.
pub fn run_energy_ito(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    if spec.model.penalty.is_active() {
        return Err(HarnessError::Precondition("the energy identity is checked without penalty".into()));
    }
    let psi = &spec.model.psi;
    if !(psi.linear_coefficient() > 0.0) {
        return Err(HarnessError::Precondition("the energy identity needs a positive linear part in Ψ".into()));
    }
    let basis = spec.basis.build()?;
    let x0 = spec.x0.build(&basis, spec.clip_initial)?;
    let dt = spec.solver.dt;
    let coarse = Solver::new(&basis, spec.model.clone(), run_cfg(&spec.solver, spec.solver.t_end))?;
    let fine_cfg = SolverConfig { dt: dt / 2.0, ..spec.solver.clone() };
    let fine = Solver::new(&basis, spec.model.clone(), run_cfg(&fine_cfg, spec.solver.t_end))?;
    let per = per_path(spec.n_paths, |p| {
        let noise_fine = path_noise(spec, &basis, p, dt / 2.0)?;
        let noise_coarse = noise_fine.coarsened(2);
        let residual = |s: &Solver, n: &NoisePath| -> Result<f64, HarnessError> {
            let tr = s.simulate(&x0, n)?;
            Ok(tr.integrals.energy_residual(tr.first().diag.l2, tr.last().diag.l2))
        };
        Ok((residual(&coarse, &noise_coarse)?, residual(&fine, &noise_fine)?))
    })?;
    let mut report = VerdictReport::new(spec);
    report.warnings.extend(coarse.warnings(&x0));
    for (p, (a, b)) in per.iter().enumerate() {
        report.record(p as u64, "residual_dt", *a);
        report.record(p as u64, "residual_half_dt", *b);
    }
    let mean_abs = |f: &dyn Fn(&(f64, f64)) -> f64| per.iter().map(|v| f(v).abs()).sum::<f64>() / per.len() as f64;
    let r1 = mean_abs(&|v| v.0);
    let r2 = mean_abs(&|v| v.1);
    report.stat("mean_abs_residual_dt", r1);
    report.stat("mean_abs_residual_half_dt", r2);
    let silent = spec.model.noise.is_silent(basis.n_modes());
    // with noise the quadratic-variation fluctuation Σ‖ΔW‖² − ∫‖σ‖²ds is O(√dt)
    let lo = if silent { 1.5 } else { 1.2 };
    let scale = 1.0 + basis.norm(&x0, crate::basis::Norm::L2)?.powi(2);
    if r1 <= 1e-14 * scale && r2 <= 1e-14 * scale {
        report.check("halving_ratio", 1.0, lo, true, None, "residual vanishes identically");
    } else {
        let ratio = r1 / r2;
        report.stat("halving_ratio", ratio);
        report.check("halving_ratio", ratio, lo, (lo..=2.5).contains(&ratio), None, format!("mean |residual| ratio dt vs dt/2 in [{lo}, 2.5]"));
    }
    if silent && psi.is_linear() && spec.model.phi == crate::model::PhiSpec::zero() {
        let tol = spec.tol.energy_abs;
        report.check("heat_residual", r1, tol, r1 < tol, None, "deterministic heat case residual");
    }
    Ok(report)
}

/// Moment bounds compared across penalty levels.
pub fn run_moment_bounds(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let basis = spec.basis.build()?;
    let x0 = spec.x0.build(&basis, spec.clip_initial)?;
    let levels = &spec.params.penalty_levels;
    if levels.is_empty() {
        return Err(HarnessError::Precondition("penalty_levels is empty".into()));
    }
    let cfg = run_cfg(&spec.solver, spec.solver.t_end);
    let base = Solver::new(&basis, spec.model.clone(), cfg.clone())?;
    let family = base.penalty_family(levels)?;
    let refs: Vec<&Solver> = family.iter().collect();
    let p = 1.0 + spec.model.psi.r;
    let h = basis.h();
    let every = spec.solver.record_every as u64;
    let nl = levels.len();
    // per path: (sup ‖X‖², lp^p series per level, ∫𝓔(Ψ,Ψ))
    let per = per_path(spec.n_paths, |pid| {
        let noise = path_noise(spec, &basis, pid, cfg.dt)?;
        let mut sup = vec![0.0f64; nl];
        let mut lp: Vec<Vec<f64>> = vec![Vec::new(); nl];
        let trajs = simulate_coupled(&refs, &vec![x0.clone(); nl], &noise, |s| {
            for (i, snap) in s.iter().enumerate() {
                let l2: f64 = snap.x.coeffs().iter().map(|c| c * c).sum();
                sup[i] = sup[i].max(l2);
                if snap.step % every == 0 {
                    lp[i].push(lp_power(h, snap.grid.values(), p));
                }
            }
        })?;
        let energy: Vec<f64> = trajs.iter().map(|t| t.integrals.psi_energy).collect();
        Ok((sup, lp, energy))
    })?;
    let mut report = VerdictReport::new(spec);
    report.warnings.extend(base.warnings(&x0));
    let n = per.len() as f64;
    let mut sup_mean = vec![0.0; nl];
    let mut lp_sup = vec![0.0; nl];
    let mut energy_mean = vec![0.0; nl];
    for i in 0..nl {
        sup_mean[i] = per.iter().map(|v| v.0[i]).sum::<f64>() / n;
        energy_mean[i] = per.iter().map(|v| v.2[i]).sum::<f64>() / n;
        let len = per[0].1[i].len();
        lp_sup[i] = (0..len).map(|j| per.iter().map(|v| v.1[i][j]).sum::<f64>() / n).fold(0.0, f64::max);
        for (pid, v) in per.iter().enumerate() {
            report.record(pid as u64, format!("sup_l2_sq[n={}]", levels[i]), v.0[i]);
            report.record(pid as u64, format!("int_psi_energy[n={}]", levels[i]), v.2[i]);
        }
        report.stat(format!("E_sup_l2_sq[n={}]", levels[i]), sup_mean[i]);
        report.stat(format!("sup_E_lp[n={}]", levels[i]), lp_sup[i]);
        report.stat(format!("E_int_psi_energy[n={}]", levels[i]), energy_mean[i]);
    }
    let factor = spec.tol.moment_factor;
    for (name, vals) in [("sup_l2_uniform", &sup_mean), ("lp_uniform", &lp_sup), ("psi_energy_uniform", &energy_mean)] {
        let hi = vals.iter().copied().fold(0.0, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = if hi == 0.0 { 1.0 } else { hi / lo };
        report.check(name, ratio, factor, ratio <= factor, None, "max/min across penalty levels");
    }
    Ok(report)
}

/// Sweep outputs shared by the penalty-limit, complementarity and vague
/// convergence experiments.
struct SweepPath {
    max_violation: f64,
    scale: f64,
    neg_l1: Vec<f64>,
    pairing: Vec<f64>,
    pairing_scale: Vec<f64>,
    max_step_pairing: Vec<f64>,
    /// `ν_T^{(n)}(f)` per level per test function.
    nu_f: Vec<Vec<f64>>,
    balance_error: f64,
}

fn test_functions(basis: &Basis) -> Vec<(String, GridField)> {
    let bump = |c: f64, w: f64| {
        basis.sample(move |x| {
            let z = (x - c) / w;
            if z.abs() < 1.0 { (1.0 - 1.0 / (1.0 - z * z)).exp() } else { 0.0 }
        })
    };
    let mut out = Vec::new();
    for k in 1..=2.min(basis.n_modes()) {
        out.push((format!("e{k}"), GridField(basis.mode_row(k).to_vec())));
    }
    out.push(("bump_0.3".into(), bump(0.3, 0.2)));
    out.push(("bump_0.7".into(), bump(0.7, 0.2)));
    out
}

/// Independent reconstruction of `ν_t(e_k)` from the state, the replayed
/// noise and the drift evaluated at the scheme's own points.
struct BalanceTracker {
    x0: SpectralField,
    noise: Vec<f64>,
    drift: Vec<f64>,
    prev_grid: GridField,
    prev_psi: GridField,
    worst: f64,
}

impl BalanceTracker {
    fn new(basis: &Basis, x0: &SpectralField) -> Self {
        let g = basis.to_grid(x0).expect("basis-shaped field");
        BalanceTracker {
            x0: x0.clone(),
            noise: vec![0.0; basis.n_modes()],
            drift: vec![0.0; basis.n_modes()],
            prev_grid: g,
            prev_psi: basis.zeros_grid(),
            worst: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update(&mut self, basis: &Basis, solver: &Solver, dw: &[f64], snap: &Snapshot, lam_eff: &[f64], check: bool) {
        let dt = solver.config().dt;
        let model = solver.model();
        if snap.step == 0 {
            self.prev_psi = snap.psi_grid.clone();
            return;
        }
        for (a, b) in self.noise.iter_mut().zip(dw) {
            *a += b;
        }
        match solver.config().scheme {
            Scheme::ImplicitNodal | Scheme::Explicit => {
                let psi_at = if solver.config().scheme == Scheme::ImplicitNodal { snap.psi_grid } else { &self.prev_psi };
                let psi_hat = basis.to_spectral(psi_at).expect("basis-shaped field");
                let phi_hat = basis.to_spectral(&model.phi.eval_grid(&self.prev_grid)).expect("basis-shaped field");
                for k in 0..self.drift.len() {
                    self.drift[k] += dt * (-lam_eff[k] * psi_hat.coeffs()[k] + phi_hat.coeffs()[k]);
                }
            }
            // the IMEX splits mix evaluation points; use the scheme accumulator
            Scheme::ImexLinear | Scheme::ImexPenalty => self.drift.copy_from_slice(snap.integrals.drift.coeffs()),
        }
        self.prev_grid = snap.grid.clone();
        self.prev_psi = snap.psi_grid.clone();
        if check {
            for k in 0..self.drift.len() {
                let ledger = basis.inner_grid(&snap.ledger.nu_grid, &GridField(basis.mode_row(k + 1).to_vec()));
                let balance = snap.x.coeffs()[k] - self.x0.coeffs()[k] - self.noise[k] - self.drift[k];
                self.worst = self.worst.max((ledger - balance).abs());
            }
        }
    }
}

fn run_sweep(spec: &ExperimentSpec, levels: &[f64], with_balance: bool) -> Result<(Vec<SweepPath>, Vec<String>, Vec<String>), HarnessError> {
    if levels.is_empty() {
        return Err(HarnessError::Precondition("penalty_levels is empty".into()));
    }
    let basis = spec.basis.build()?;
    let x0 = spec.x0.build(&basis, spec.clip_initial)?;
    let cfg = run_cfg(&spec.solver, spec.solver.t_end);
    let base = Solver::new(&basis, spec.model.clone(), cfg.clone())?;
    let family = base.penalty_family(levels)?;
    let refs: Vec<&Solver> = family.iter().collect();
    let tests = test_functions(&basis);
    let names = tests.iter().map(|t| t.0.clone()).collect();
    let lam_eff: Vec<f64> = basis.eigenvalues().iter().map(|l| l / (1.0 + cfg.resolvent_eps * l)).collect();
    let every = spec.solver.record_every as u64;
    let nl = levels.len();
    let per = per_path(spec.n_paths, |pid| {
        let noise = path_noise(spec, &basis, pid, cfg.dt)?;
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        let mut max_step_pairing = vec![f64::NEG_INFINITY; nl];
        let mut trackers: Vec<BalanceTracker> = (0..nl).map(|_| BalanceTracker::new(&basis, &x0)).collect();
        let mut dw = SpectralField::zeros(basis.n_modes());
        let trajs = simulate_coupled(&refs, &vec![x0.clone(); nl], &noise, |s| {
            for w in s.windows(2) {
                for (lo, hi) in w[0].grid.values().iter().zip(w[1].grid.values()) {
                    worst = worst.max(lo - hi);
                }
            }
            for (i, snap) in s.iter().enumerate() {
                scale = snap.grid.values().iter().fold(scale, |a, v| a.max(v.abs()));
                if let Some(last) = snap.ledger.pairing_log.last() {
                    max_step_pairing[i] = max_step_pairing[i].max(*last);
                }
            }
            if with_balance {
                if s[0].step > 0 {
                    dw = noise.increment(s[0].step - 1);
                }
                let check = s[0].step % every == 0;
                for (i, snap) in s.iter().enumerate() {
                    trackers[i].update(&basis, refs[i], dw.coeffs(), snap, &lam_eff, check);
                }
            }
        })?;
        // the final step is always checked
        let balance_error = trackers.iter().map(|t| t.worst).fold(0.0, f64::max);
        let nu_f = trajs.iter().map(|t| tests.iter().map(|(_, f)| t.ledger.integrate(&basis, f)).collect()).collect();
        Ok(SweepPath {
            max_violation: worst,
            scale,
            neg_l1: trajs.iter().map(|t| t.integrals.neg_l1).collect(),
            pairing: trajs.iter().map(|t| t.ledger.pairing_total).collect(),
            pairing_scale: trajs.iter().map(|t| t.ledger.pairing_scale).collect(),
            max_step_pairing: max_step_pairing.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect(),
            nu_f,
            balance_error,
        })
    })?;
    Ok((per, base.warnings(&x0), names))
}

fn level_means(per: &[SweepPath], f: impl Fn(&SweepPath) -> &Vec<f64>) -> Vec<f64> {
    let nl = f(&per[0]).len();
    (0..nl).map(|i| per.iter().map(|p| f(p)[i]).sum::<f64>() / per.len() as f64).collect()
}

/// Penalty monotonicity and decay of the negative part.
pub fn run_penalty_limit(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let levels = &spec.params.penalty_levels;
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::Precondition("penalty_levels must be increasing".into()));
    }
    let (per, warnings, _) = run_sweep(spec, levels, false)?;
    let mut report = VerdictReport::new(spec);
    report.warnings = warnings;
    let tol = spec.tol.pathwise;
    let mut violations = 0usize;
    let mut max_violation = 0.0f64;
    for (pid, p) in per.iter().enumerate() {
        report.record(pid as u64, "monotonicity_violation", p.max_violation);
        for (i, v) in p.neg_l1.iter().enumerate() {
            report.record(pid as u64, format!("int_neg_l1[n={}]", levels[i]), *v);
        }
        if p.max_violation > tol * p.scale {
            violations += 1;
        }
        max_violation = max_violation.max(p.max_violation);
    }
    report.stat("max_monotonicity_violation", max_violation);
    report.check(
        "penalty_monotone",
        violations as f64,
        0.0,
        violations == 0,
        None,
        format!("paths with X^(n_i) − X^(n_(i+1)) > {tol:e}·scale"),
    );
    let neg = level_means(&per, |p| &p.neg_l1);
    for (i, v) in neg.iter().enumerate() {
        report.stat(format!("E_int_neg_l1[n={}]", levels[i]), *v);
    }
    if neg.iter().all(|v| *v <= 0.0) {
        report.check("negative_part_slope", 0.0, spec.tol.slope_hi, true, None, "reflection inactive; slope undefined");
    } else if neg.iter().any(|v| *v <= 0.0) || levels.len() < 2 {
        report.check("negative_part_slope", f64::NAN, spec.tol.slope_hi, false, None, "negative part vanishes at some levels");
    } else {
        let xs: Vec<f64> = levels.iter().map(|n| n.ln()).collect();
        let ys: Vec<f64> = neg.iter().map(|v| v.ln()).collect();
        let slope = fit_slope(&xs, &ys);
        report.stat("negative_part_slope", slope);
        let (lo, hi) = (spec.tol.slope_lo, spec.tol.slope_hi);
        report.check(
            "negative_part_slope",
            slope,
            hi,
            (lo..=hi).contains(&slope),
            None,
            format!("empirical rate; log-log slope of E∫‖X⁻‖₁dt vs n in [{lo}, {hi}]"),
        );
    }
    Ok(report)
}

/// Per-increment pairing `⟨Ψ(X), dν⟩` across penalty levels.
pub fn run_complementarity(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let levels = &spec.params.penalty_levels;
    let (per, warnings, _) = run_sweep(spec, levels, false)?;
    let mut report = VerdictReport::new(spec);
    report.warnings = warnings;
    for (pid, p) in per.iter().enumerate() {
        for (i, v) in p.pairing.iter().enumerate() {
            report.record(pid as u64, format!("pairing[n={}]", levels[i]), *v);
        }
    }
    let pairing = level_means(&per, |p| &p.pairing);
    let scale = level_means(&per, |p| &p.pairing_scale);
    let mut sign_ok = true;
    let mut max_step: f64 = f64::NEG_INFINITY;
    for p in &per {
        for (i, v) in p.max_step_pairing.iter().enumerate() {
            max_step = max_step.max(*v);
            if *v > 1e-14 * (1.0 + p.pairing_scale[i]) {
                sign_ok = false;
            }
        }
    }
    for (i, n) in levels.iter().enumerate() {
        report.stat(format!("E_pairing[n={n}]"), pairing[i]);
        report.stat(format!("E_pairing_scale[n={n}]"), scale[i]);
    }
    report.stat("max_step_pairing", max_step);
    let mags: Vec<f64> = pairing.iter().map(|v| v.abs()).collect();
    let all_zero = mags.iter().all(|m| *m == 0.0);
    let decreasing = all_zero || mags.windows(2).all(|w| w[1] < w[0]);
    report.check("pairing_decreasing", mags.last().copied().unwrap_or(0.0), mags[0], decreasing, None, "|E∫⟨Ψ(X),dν⟩| strictly decreasing in n");
    let last = mags.len() - 1;
    let rel = if scale[last] > 0.0 { mags[last] / scale[last] } else { 0.0 };
    report.stat("relative_pairing_last", rel);
    let tol = spec.tol.complementarity;
    report.check("pairing_relative", rel, tol, rel <= tol, None, "at the largest n, relative to E∫‖Ψ(X)‖₁‖dν‖");
    report.check("pairing_nonpositive", max_step.max(0.0), 0.0, sign_ok, None, "every per-step pairing ≤ 0");
    Ok(report)
}

/// Cauchy property of `ν_T^{(n)}(f)` and the balance identity for `ν`.
pub fn run_vague_convergence(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let levels = &spec.params.penalty_levels;
    let (per, warnings, names) = run_sweep(spec, levels, true)?;
    let mut report = VerdictReport::new(spec);
    report.warnings = warnings;
    let nl = levels.len();
    let mut balance = 0.0f64;
    for (pid, p) in per.iter().enumerate() {
        report.record(pid as u64, "balance_error", p.balance_error);
        for i in 0..nl {
            for (j, name) in names.iter().enumerate() {
                report.record(pid as u64, format!("nu_T({name})[n={}]", levels[i]), p.nu_f[i][j]);
            }
        }
        balance = balance.max(p.balance_error);
    }
    report.stat("max_balance_error", balance);
    let tol = spec.tol.balance;
    report.check("balance_identity", balance, tol, balance <= tol, None, "|ledger ν_t(e_k) − state/noise/drift balance| over modes, times, paths, levels");
    if nl >= 2 {
        let mut shrink_ok = true;
        let mut worst_shrink = f64::INFINITY;
        let mut all_zero = true;
        for (j, name) in names.iter().enumerate() {
            let gaps: Vec<f64> = (0..nl - 1)
                .map(|i| per.iter().map(|p| (p.nu_f[i + 1][j] - p.nu_f[i][j]).abs()).sum::<f64>() / per.len() as f64)
                .collect();
            for (i, g) in gaps.iter().enumerate() {
                report.stat(format!("cauchy_gap({name})[{}->{}]", levels[i], levels[i + 1]), *g);
            }
            if gaps.iter().any(|g| *g > 0.0) {
                all_zero = false;
            }
            for (i, w) in gaps.windows(2).enumerate() {
                let decades = (levels[i + 2] / levels[i + 1]).log10();
                let need = spec.tol.cauchy_shrink.powf(decades);
                let shrink = if w[1] == 0.0 { f64::INFINITY } else { w[0] / w[1] };
                worst_shrink = worst_shrink.min(shrink / need * spec.tol.cauchy_shrink);
                if shrink < need && w[0] > 0.0 {
                    shrink_ok = false;
                }
            }
        }
        let note = if all_zero { "reflection inactive; all ν^(n)(f) vanish" } else { "empirical; gap ratio per decade of n" };
        report.check("cauchy_gaps_shrink", if all_zero { f64::INFINITY } else { worst_shrink }, spec.tol.cauchy_shrink, shrink_ok, None, note);
    }
    Ok(report)
}

/// `∫₀ᵀ(e^{−λt} − e^{−λt/(1+ελ)})² dt` for an initial `amplitude · e_k`.
pub fn resolvent_mode_gap(lambda: f64, eps: f64, t_end: f64, amplitude: f64) -> f64 {
    let a = lambda;
    let b = lambda / (1.0 + eps * lambda);
    let term = |rate: f64| if rate == 0.0 { t_end } else { (1.0 - (-rate * t_end).exp()) / rate };
    amplitude * amplitude * (term(2.0 * a) + term(2.0 * b) - 2.0 * term(a + b))
}

/// `𝔼∫‖X − X^ε‖^{1+r}_{1+r}dt` along an ε ladder.
pub fn run_resolvent_limit(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let eps = &spec.params.eps_levels;
    if eps.is_empty() || eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(HarnessError::Precondition("eps_levels must be nonnegative and nonempty".into()));
    }
    let basis = spec.basis.build()?;
    let x0 = spec.x0.build(&basis, spec.clip_initial)?;
    let cfg = run_cfg(&SolverConfig { resolvent_eps: 0.0, ..spec.solver.clone() }, spec.solver.t_end);
    let mut solvers = vec![Solver::new(&basis, spec.model.clone(), cfg.clone())?];
    for e in eps {
        solvers.push(Solver::new(&basis, spec.model.clone(), SolverConfig { resolvent_eps: *e, ..cfg.clone() })?);
    }
    let refs: Vec<&Solver> = solvers.iter().collect();
    let p = 1.0 + spec.model.psi.r;
    let h = basis.h();
    let dt = cfg.dt;
    let ne = eps.len();
    let per = per_path(spec.n_paths, |pid| {
        let noise = path_noise(spec, &basis, pid, dt)?;
        let mut acc = vec![0.0; ne];
        let mut prev = vec![0.0; ne];
        let mut diff = vec![0.0; basis.n_grid()];
        simulate_coupled(&refs, &vec![x0.clone(); ne + 1], &noise, |s| {
            for i in 0..ne {
                for (d, (a, b)) in diff.iter_mut().zip(s[0].grid.values().iter().zip(s[i + 1].grid.values())) {
                    *d = a - b;
                }
                let v = lp_power(h, &diff, p);
                if s[0].step > 0 {
                    acc[i] += 0.5 * dt * (prev[i] + v);
                }
                prev[i] = v;
            }
        })?;
        Ok(acc)
    })?;
    let mut report = VerdictReport::new(spec);
    report.warnings.extend(solvers[0].warnings(&x0));
    let mut means = Vec::new();
    for i in 0..ne {
        for (pid, v) in per.iter().enumerate() {
            report.record(pid as u64, format!("int_lp_gap[eps={}]", eps[i]), v[i]);
        }
        let e = estimate(&per.iter().map(|v| v[i]).collect::<Vec<_>>());
        report.stat(format!("E_int_lp_gap[eps={}]", eps[i]), e.mean);
        report.stat(format!("se_int_lp_gap[eps={}]", eps[i]), e.se);
        means.push(e.mean);
    }
    let monotone = means.windows(2).all(|w| w[1] < w[0]) || means.iter().all(|m| *m == 0.0);
    report.check("gap_decreasing", means[ne - 1], means[0], monotone, None, "E∫‖X−X^ε‖ strictly decreasing along the ε ladder");
    let rel = if means[0] > 0.0 { means[ne - 1] / means[0] } else { 0.0 };
    let tol = spec.tol.resolvent_final;
    report.check("gap_final_relative", rel, tol, rel <= tol, None, "smallest ε relative to largest ε");

    // scalar ODE oracle for a single-mode start of the linear noiseless problem
    let single_mode = match &spec.x0 {
        InitialCondition::Mode { k, amplitude } if !spec.clip_initial => Some((*k, *amplitude)),
        _ => None,
    };
    let linear_free = spec.model.psi.is_linear()
        && spec.model.noise.is_silent(basis.n_modes())
        && !spec.model.penalty.is_active()
        && spec.model.phi == crate::model::PhiSpec::zero();
    if let (Some((k, amp)), true) = (single_mode, linear_free) {
        let lam = basis.eigenvalues()[k - 1] * spec.model.psi.linear_coefficient();
        let mut worst = 0.0f64;
        for (i, e) in eps.iter().enumerate() {
            let exact = resolvent_mode_gap(lam, *e, cfg.t_end, amp);
            report.stat(format!("oracle_gap[eps={e}]"), exact);
            worst = worst.max((means[i] - exact).abs());
        }
        let tol = spec.tol.oracle;
        report.check("scalar_ode_oracle", worst, tol, worst <= tol, None, "closed-form mode decay gap");
    }
    Ok(report)
}

/// Chapman–Kolmogorov: `P_{s+t}f(x)` against `𝔼[P_t f(X_s(x))]`.
pub fn run_markov_semigroup(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let (s, t) = (spec.params.markov_s, spec.params.markov_t);
    if !(s > 0.0 && t >= 0.0) {
        return Err(HarnessError::Precondition("markov_s must be > 0 and markov_t >= 0".into()));
    }
    let basis = spec.basis.build()?;
    let x0 = spec.x0.build(&basis, spec.clip_initial)?;
    let dt = spec.solver.dt;
    let direct = Solver::new(&basis, spec.model.clone(), run_cfg(&spec.solver, s + t))?;
    let first = Solver::new(&basis, spec.model.clone(), run_cfg(&spec.solver, s))?;
    let second = if t > 0.0 { Some(Solver::new(&basis, spec.model.clone(), run_cfg(&spec.solver, t))?) } else { None };
    let n = spec.n_paths as u64;
    let per = per_path(spec.n_paths, |pid| {
        let a = direct.simulate(&x0, &path_noise(spec, &basis, pid, dt)?)?;
        let mid = first.simulate(&x0, &path_noise(spec, &basis, n + pid, dt)?)?;
        let end = match &second {
            Some(sv) => sv.simulate(&mid.last().x, &path_noise(spec, &basis, 2 * n + pid, dt)?)?.last().grid.clone(),
            None => mid.last().grid.clone(),
        };
        Ok((observables(&basis, &a.last().grid), observables(&basis, &end)))
    })?;
    let mut report = VerdictReport::new(spec);
    report.warnings.extend(direct.warnings(&x0));
    for (j, name) in OBSERVABLE_NAMES.iter().enumerate() {
        let d: Vec<f64> = per.iter().map(|v| v.0[j]).collect();
        let two: Vec<f64> = per.iter().map(|v| v.1[j]).collect();
        for (pid, v) in per.iter().enumerate() {
            report.record(pid as u64, format!("{name}:direct"), v.0[j]);
            report.record(pid as u64, format!("{name}:two_stage"), v.1[j]);
        }
        let (ed, et) = (estimate(&d), estimate(&two));
        let se = (ed.se * ed.se + et.se * et.se).sqrt();
        let diff = (ed.mean - et.mean).abs();
        report.stat(format!("{name}:direct"), ed.mean);
        report.stat(format!("{name}:two_stage"), et.mean);
        let k = spec.tol.se_factor;
        let bound = if se > 0.0 { k * se } else { 1e-12 * (1.0 + ed.mean.abs()) };
        report.check(&format!("chapman_kolmogorov:{name}"), diff, bound, diff <= bound, Some(se), format!("|direct − two-stage| ≤ {k}·SE"));
    }
    Ok(report)
}

/// Per-path sampled series for the ergodic experiment.
struct ErgodicPath {
    obs: [Vec<f64>; 3],
    h1: Vec<f64>,
    mode_sq: Vec<Vec<f64>>,
}

/// Long-run averages, coupled decay, `H¹` stability and the OU check.
pub fn run_ergodic(spec: &ExperimentSpec) -> Result<VerdictReport, HarnessError> {
    let basis = spec.basis.build()?;
    let (x0, y0) = initial_pair(spec, &basis)?;
    let cfg = run_cfg(&spec.solver, spec.solver.t_end);
    let solver = Solver::new(&basis, spec.model.clone(), cfg.clone())?;
    let dt = cfg.dt;
    let burn = (spec.params.burn_in / dt).round() as u64;
    if burn >= cfg.n_steps() {
        return Err(HarnessError::Precondition("burn_in must be shorter than t_end".into()));
    }
    let every = spec.solver.record_every as u64;
    let n = spec.n_paths as u64;
    let lam = basis.eigenvalues().to_vec();
    let noisy: Vec<usize> = (0..basis.n_modes()).filter(|k| spec.model.noise.q(k + 1) != 0.0).take(4).collect();
    let ou = match spec.model.phi.kind {
        PhiKind::Linear { slope, offset } if offset == 0.0 => {
            (spec.model.psi.is_linear() && !spec.model.penalty.is_active()).then_some(slope)
        }
        _ => None,
    };
    let run_path = |start: &SpectralField, stream: u64| -> Result<ErgodicPath, HarnessError> {
        let noise = path_noise(spec, &basis, stream, dt)?;
        let mut out = ErgodicPath { obs: Default::default(), h1: Vec::new(), mode_sq: vec![Vec::new(); noisy.len()] };
        simulate_coupled(&[&solver], std::slice::from_ref(start), &noise, |s| {
            let snap = &s[0];
            if snap.step > burn && snap.step % every == 0 {
                let o = observables(&basis, snap.grid);
                for j in 0..3 {
                    out.obs[j].push(o[j]);
                }
                out.h1.push(snap.x.coeffs().iter().zip(&lam).map(|(c, l)| l * c * c).sum());
                for (i, k) in noisy.iter().enumerate() {
                    out.mode_sq[i].push(snap.x.coeffs()[*k].powi(2));
                }
            }
        })?;
        Ok(out)
    };
    let from_x = per_path(spec.n_paths, |p| run_path(&x0, p))?;
    let from_y = per_path(spec.n_paths, |p| run_path(&y0, n + p))?;

    let mut report = VerdictReport::new(spec);
    report.warnings.extend(solver.warnings(&x0));
    let nb = spec.params.batches.max(2);
    let sample_dt = every as f64 * dt;
    let pooled = |paths: &[ErgodicPath], f: &dyn Fn(&ErgodicPath) -> &Vec<f64>| -> (Estimate, f64) {
        let mut means = Vec::new();
        let mut all = Vec::new();
        for p in paths {
            means.extend(batch_means(f(p), nb));
            all.extend_from_slice(f(p));
        }
        let e = estimate(&means);
        let var = estimate(&all).se.powi(2) * all.len() as f64;
        // integrated autocorrelation time from batch variance
        let batch_len = (f(&paths[0]).len() / nb) as f64 * sample_dt;
        let tau = if var > 0.0 { batch_len * e.se.powi(2) * means.len() as f64 / (2.0 * var) } else { 0.0 };
        (e, tau)
    };
    let k_se = spec.tol.se_factor;
    for (j, name) in OBSERVABLE_NAMES.iter().enumerate() {
        let (ex, tau) = pooled(&from_x, &|p| &p.obs[j]);
        let (ey, _) = pooled(&from_y, &|p| &p.obs[j]);
        for (pid, p) in from_x.iter().enumerate() {
            report.record(pid as u64, format!("time_avg:{name}"), estimate(&p.obs[j]).mean);
        }
        report.stat(format!("time_avg:{name}:x"), ex.mean);
        report.stat(format!("time_avg:{name}:y"), ey.mean);
        report.stat(format!("autocorr_time:{name}"), tau);
        let se = (ex.se * ex.se + ey.se * ey.se).sqrt();
        let diff = (ex.mean - ey.mean).abs();
        let bound = if se > 0.0 { k_se * se } else { 1e-12 * (1.0 + ex.mean.abs()) };
        report.check(&format!("two_start:{name}"), diff, bound, diff <= bound, Some(se), "time averages from both starts agree within SE band");
    }

    // H¹ running average: first against second half after burn-in
    let halves = |paths: &[ErgodicPath], second: bool| -> Estimate {
        let mut means = Vec::new();
        for p in paths {
            let mid = p.h1.len() / 2;
            let part = if second { &p.h1[mid..] } else { &p.h1[..mid] };
            means.extend(batch_means(part, nb / 2));
        }
        estimate(&means)
    };
    let (h_a, h_b) = (halves(&from_x, false), halves(&from_x, true));
    report.stat("time_avg_h1_sq", 0.5 * (h_a.mean + h_b.mean));
    let se = (h_a.se * h_a.se + h_b.se * h_b.se).sqrt();
    let diff = (h_a.mean - h_b.mean).abs();
    let bound = if se > 0.0 { k_se * se } else { 1e-12 * (1.0 + h_a.mean.abs()) };
    report.check("h1_average_stable", diff, bound, diff <= bound && h_b.mean.is_finite(), Some(se), "first vs second half of ‖X‖²_{H¹} averages");

    // coupled decay under shared noise
    let k = spec.model.phi.one_sided();
    let gx = basis.to_grid(&x0)?;
    let gy = basis.to_grid(&y0)?;
    let d0 = grid_l1(basis.h(), gx.values(), gy.values());
    if k >= 0.0 {
        report.warnings.push(format!("K = {k} >= 0; mixing-rate check skipped"));
    } else if d0 == 0.0 {
        report.warnings.push("identical starts; coupled decay check skipped".into());
    } else {
        let dcfg = run_cfg(&spec.solver, spec.params.decay_horizon);
        let dsolver = Solver::new(&basis, spec.model.clone(), dcfg.clone())?;
        let h = basis.h();
        let dist = per_path(spec.n_paths, |p| {
            let noise = path_noise(spec, &basis, 2 * n + p, dt)?;
            let mut d = Vec::new();
            simulate_coupled(&[&dsolver, &dsolver], &[x0.clone(), y0.clone()], &noise, |s| {
                if s[0].step % every == 0 {
                    d.push((s[0].t, grid_l1(h, s[0].grid.values(), s[1].grid.values())));
                }
            })?;
            Ok(d)
        })?;
        let mut ts = Vec::new();
        let mut ls = Vec::new();
        for i in 0..dist[0].len() {
            let m = dist.iter().map(|d| d[i].1).sum::<f64>() / dist.len() as f64;
            if m > 1e-10 * d0 {
                ts.push(dist[0][i].0);
                ls.push(m.ln());
            }
        }
        if ts.len() >= 2 {
            let rate = fit_slope(&ts, &ls);
            let bound = k + spec.tol.decay_margin * k.abs();
            report.stat("coupled_decay_rate", rate);
            report.check("coupled_decay_rate", rate, bound, rate <= bound, None, "fitted log-rate of E‖X_t(x)−X_t(y)‖₁");
        } else {
            report.check("coupled_decay_rate", f64::NEG_INFINITY, k, true, None, "distance collapsed within one sample");
        }
    }

    // Ornstein–Uhlenbeck stationary variance
    if let Some(slope) = ou {
        let a = spec.model.psi.linear_coefficient();
        let mut worst = 0.0f64;
        for (i, kk) in noisy.iter().enumerate() {
            let mut all = Vec::new();
            for p in from_x.iter().chain(from_y.iter()) {
                all.extend_from_slice(&p.mode_sq[i]);
            }
            let v = estimate(&all).mean;
            let q = spec.model.noise.q(kk + 1);
            let exact = q * q / (2.0 * (a * lam[*kk] - slope));
            report.stat(format!("stationary_var[mode={}]", kk + 1), v);
            report.stat(format!("stationary_var_exact[mode={}]", kk + 1), exact);
            worst = worst.max((v / exact - 1.0).abs());
        }
        let tol = spec.tol.ou_rel;
        report.check("ou_stationary_variance", worst, tol, worst <= tol, None, "relative error of time-averaged mode variance");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PenaltySpec, PhiSpec, PsiSpec};
    use crate::noise::NoiseSpec;

    fn small_spec(experiment: Experiment) -> ExperimentSpec {
        ExperimentSpec {
            experiment,
            n_paths: 3,
            basis: BasisSpec { n_modes: 8, n_grid: 8, spectrum: Spectrum::Lattice },
            model: Model {
                psi: PsiSpec::power(3.0, 1.0, 0.1).unwrap(),
                phi: PhiSpec::zero(),
                penalty: PenaltySpec::new(100.0).unwrap(),
                noise: NoiseSpec::power(0.3, 1.0, 7).unwrap(),
            },
            solver: SolverConfig { dt: 1e-3, t_end: 0.05, scheme: Scheme::ImplicitNodal, record_every: 10, ..SolverConfig::default() },
            x0: InitialCondition::Mode { k: 1, amplitude: 0.2 },
            y0: None,
            clip_initial: true,
            params: ExperimentParams { penalty_levels: vec![10.0, 100.0], ..ExperimentParams::default() },
            tol: Tolerances::default(),
        }
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn comparison_identical_systems_has_zero_violation() {
        let mut spec = small_spec(Experiment::Comparison);
        spec.params.phi_shift = 0.0;
        let r = run(&spec).unwrap();
        assert_eq!(r.statistics["max_violation"], 0.0);
        assert!(r.pass());
    }

    #[test]
    fn comparison_rejects_raised_lower_drift() {
        let mut spec = small_spec(Experiment::Comparison);
        spec.params.phi_shift = -1.0;
        assert!(matches!(run(&spec), Err(HarnessError::Precondition(_))));
    }

    #[test]
    fn contraction_rejects_equal_starts() {
        let spec = small_spec(Experiment::L1Contraction);
        assert!(matches!(run(&spec), Err(HarnessError::Precondition(_))));
    }

    #[test]
    fn complementarity_without_penalty_is_zero() {
        let mut spec = small_spec(Experiment::Complementarity);
        spec.params.penalty_levels = vec![0.0];
        let r = run(&spec).unwrap();
        assert_eq!(r.statistics["E_pairing[n=0]"], 0.0);
    }

    #[test]
    fn moments_vanish_for_trivial_problem() {
        let mut spec = small_spec(Experiment::MomentBounds);
        spec.model.noise = NoiseSpec::silent(7);
        spec.x0 = InitialCondition::Zero;
        let r = run(&spec).unwrap();
        assert!(r.statistics.iter().filter(|(k, _)| k.starts_with("E_") || k.starts_with("sup_")).all(|(_, v)| *v == 0.0));
        assert!(r.pass());
    }

    #[test]
    fn resolvent_zero_eps_gives_zero_gap() {
        let mut spec = small_spec(Experiment::ResolventLimit);
        spec.params.eps_levels = vec![0.0];
        let r = run(&spec).unwrap();
        assert_eq!(r.statistics["E_int_lp_gap[eps=0]"], 0.0);
    }

    #[test]
    fn reruns_are_identical() {
        let spec = small_spec(Experiment::VagueConvergence);
        let a = run(&spec).unwrap();
        let b = run(&spec).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.statistics, b.statistics);
    }

    #[test]
    fn batch_means_drop_remainder() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(batch_means(&v, 3), vec![1.0, 4.0, 7.0]);
        assert!(batch_means(&v[..2], 3).is_empty());
    }

    #[test]
    fn slope_of_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, -1.0, -3.0, -5.0];
        assert!((fit_slope(&xs, &ys) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn markov_deterministic_case_is_exact() {
        let mut spec = small_spec(Experiment::MarkovSemigroup);
        spec.model.noise = NoiseSpec::silent(7);
        spec.params.markov_s = 0.02;
        spec.params.markov_t = 0.02;
        let r = run(&spec).unwrap();
        assert!(r.pass(), "{:?}", r.criteria);
    }
}
