//! Time stepping for the Galerkin-projected penalized equation
//! `dX = {LΨ(X) + Φ(X) + n X⁻} dt + σ dW` and its resolvent-regularized
//! variant where `L` is replaced by `(1 − εL)^{-1} L`.
//!
//! Every scheme keeps the discrete solution identity
//! `X_t = X_0 + ∫drift + ∫σdW + η_t` exact up to rounding: the penalty
//! contribution is booked in the [`ReflectionLedger`] (grid density `ν` and
//! its spectral image `η`), everything else in the drift integral.
//!
//! Schemes:
//! * `explicit`: Euler–Maruyama, penalty explicit.
//! * `imex-linear`: linear (plus stabilization) part of `LΨ` implicit per
//!   mode, nonlinear remainder and penalty explicit.
//! * `imex-linear+implicit-penalty`: as above, followed by the exact grid
//!   substep `y = x/(1+n dt)` for `x < 0`.
//! * `implicit-nodal`: backward Euler in `LΨ` and the penalty on the grid,
//!   solved by Newton with a tridiagonal Jacobian. Needs the lattice
//!   spectrum with one mode per node; the step map is then order preserving
//!   and an `L¹` contraction, so pathwise comparison results carry over to
//!   the discrete system exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{lp_power, Basis, BasisError, GridField, Norm, SpectralField, Spectrum};
use crate::model::{neg_part, PenaltySpec, PhiSpec, PsiSpec};
use crate::noise::{NoiseError, NoisePath, NoiseSpec};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver blew up at t={t} (step {step}, last ‖X‖₂={last_l2})")]
    BlowUp { t: f64, step: u64, last_l2: f64, partial: Box<Trajectory> },
    #[error("unstable configuration: {0}")]
    Unstable(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("Newton iteration did not converge at step {step} (residual {residual:e})")]
    NewtonFailed { step: u64, residual: f64 },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scheme {
    #[serde(rename = "explicit")]
    Explicit,
    #[serde(rename = "imex-linear")]
    ImexLinear,
    #[default]
    #[serde(rename = "imex-linear+implicit-penalty")]
    ImexPenalty,
    #[serde(rename = "implicit-nodal")]
    ImplicitNodal,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Explicit => "explicit",
            Scheme::ImexLinear => "imex-linear",
            Scheme::ImexPenalty => "imex-linear+implicit-penalty",
            Scheme::ImplicitNodal => "implicit-nodal",
        })
    }
}

impl FromStr for Scheme {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(Scheme::Explicit),
            "imex-linear" => Ok(Scheme::ImexLinear),
            "imex-linear+implicit-penalty" => Ok(Scheme::ImexPenalty),
            "implicit-nodal" => Ok(Scheme::ImplicitNodal),
            other => Err(SolverError::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Drift and noise of one equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub psi: PsiSpec,
    pub phi: PhiSpec,
    pub penalty: PenaltySpec,
    pub noise: NoiseSpec,
}

impl Model {
    pub fn with_penalty(&self, n: f64) -> Model {
        Model { penalty: PenaltySpec { n }, ..self.clone() }
    }

    pub fn with_phi(&self, phi: PhiSpec) -> Model {
        Model { phi, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub record_every: usize,
    /// `ε` of the regularized operator `(1 − εL)^{-1}L`; 0 is the plain equation.
    pub resolvent_eps: f64,
    /// Extra linear diffusion `β` moved into the implicit part of the IMEX
    /// schemes (`LΨ = L((a+β)X) + L(Ψ(X) − (a+β)X)`); 0 is the plain split.
    pub stabilization: f64,
    /// Relative residual tolerance of the nodal Newton solve.
    pub newton_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-4,
            t_end: 1.0,
            scheme: Scheme::default(),
            record_every: 100,
            resolvent_eps: 0.0,
            stabilization: 0.0,
            newton_tol: 1e-13,
        }
    }
}

impl SolverConfig {
    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(SolverError::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        let steps = self.t_end / self.dt;
        if steps > 1e9 {
            return Err(SolverError::Config(format!("t_end/dt = {steps:e} steps is too many")));
        }
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return Err(SolverError::Config("t_end must be an integer multiple of dt".into()));
        }
        if self.record_every == 0 {
            return Err(SolverError::Config("record_every must be >= 1".into()));
        }
        if !(self.resolvent_eps >= 0.0) || !(self.stabilization >= 0.0) {
            return Err(SolverError::Config("resolvent_eps and stabilization must be >= 0".into()));
        }
        Ok(())
    }
}

/// Supported initial data. Grid-defined data is projected onto `H_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    Zero,
    /// `amplitude · e_k`
    Mode { k: usize, amplitude: f64 },
    /// Constant on the interior nodes.
    Constant(f64),
    /// `amplitude · exp(1 − 1/(1 − ((x−center)/width)²))` inside the support.
    Bump { center: f64, width: f64, amplitude: f64 },
    Coeffs(Vec<f64>),
}

impl InitialCondition {
    /// Builds the coefficient vector; with `clip` the grid values are
    /// replaced by their positive part before projecting.
    pub fn build(&self, basis: &Basis, clip: bool) -> Result<SpectralField, SolverError> {
        let n = basis.n_modes();
        let c = match self {
            InitialCondition::Zero => basis.zeros_spectral(),
            InitialCondition::Mode { k, amplitude } => {
                if !(1..=n).contains(k) {
                    return Err(BasisError::IndexOutOfRange { k: *k, n_modes: n }.into());
                }
                SpectralField::mode(n, *k, *amplitude)
            }
            InitialCondition::Constant(v) => basis.to_spectral(&basis.sample(|_| *v))?,
            InitialCondition::Bump { center, width, amplitude } => basis.to_spectral(&basis.sample(|x| {
                let z = (x - center) / width;
                if z.abs() < 1.0 {
                    amplitude * (1.0 - 1.0 / (1.0 - z * z)).exp()
                } else {
                    0.0
                }
            }))?,
            InitialCondition::Coeffs(v) => {
                if v.len() > n {
                    return Err(BasisError::DimensionMismatch { expected: n, got: v.len() }.into());
                }
                let mut c = v.clone();
                c.resize(n, 0.0);
                SpectralField(c)
            }
        };
        if clip {
            let g = basis.to_grid(&c)?.map(|v| v.max(0.0));
            Ok(basis.to_spectral(&g)?)
        } else {
            Ok(c)
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Zero => write!(f, "zero"),
            InitialCondition::Mode { k, amplitude } => write!(f, "mode:{k}:{amplitude:?}"),
            InitialCondition::Constant(v) => write!(f, "const:{v:?}"),
            InitialCondition::Bump { center, width, amplitude } => write!(f, "bump:{center:?}:{width:?}:{amplitude:?}"),
            InitialCondition::Coeffs(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "coeffs:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for InitialCondition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}` in initial condition"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["zero"] => Ok(InitialCondition::Zero),
            ["mode", k, a] => Ok(InitialCondition::Mode {
                k: k.trim().parse().map_err(|_| format!("bad mode index `{k}`"))?,
                amplitude: num(a)?,
            }),
            ["const", v] => Ok(InitialCondition::Constant(num(v)?)),
            ["bump", c, w, a] => Ok(InitialCondition::Bump { center: num(c)?, width: num(w)?, amplitude: num(a)? }),
            ["coeffs", list] => Ok(InitialCondition::Coeffs(list.split(',').map(num).collect::<Result<_, _>>()?)),
            _ => Err(format!("unrecognized initial condition `{s}`")),
        }
    }
}

/// Solver state: time, coefficients and the synchronized grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub x: SpectralField,
    pub x_grid: GridField,
}

/// Time-cumulative reflection measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionLedger {
    /// Density of `ν_t` with respect to `μ` at the grid nodes.
    pub nu_grid: GridField,
    /// Coefficients of `η_t` (`⟨η_t, e_k⟩`).
    pub eta: SpectralField,
    /// `⟨Ψ(X), Δν⟩` for every step.
    pub pairing_log: Vec<f64>,
    /// `Σ ⟨Ψ(X), Δν⟩`
    pub pairing_total: f64,
    /// `Σ ‖Ψ(X)‖₁ · ‖Δν‖`, the natural scale for the pairing.
    pub pairing_scale: f64,
    /// Largest single-step `‖Δη‖_{H⁻¹}` (jump proxy).
    pub max_increment_hm1: f64,
}

impl ReflectionLedger {
    fn new(basis: &Basis) -> Self {
        ReflectionLedger {
            nu_grid: basis.zeros_grid(),
            eta: basis.zeros_spectral(),
            pairing_log: Vec::new(),
            pairing_total: 0.0,
            pairing_scale: 0.0,
            max_increment_hm1: 0.0,
        }
    }

    /// `ν_t(E)`
    pub fn mass(&self, basis: &Basis) -> f64 {
        basis.integral(&self.nu_grid)
    }

    /// `∫ f dν_t`
    pub fn integrate(&self, basis: &Basis, f: &GridField) -> f64 {
        basis.inner_grid(&self.nu_grid, f)
    }
}

/// Running integrals along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathIntegrals {
    /// `∫ drift ds` in coefficients (penalty excluded; it lives in `η`).
    pub drift: SpectralField,
    /// `∫ σ dW` in coefficients.
    pub noise: SpectralField,
    /// `∫ 𝓔(X, Ψ(X)) ds` (trapezoid; regularized form when `ε > 0`).
    pub dissipation: f64,
    /// `∫ ⟨X, Φ(X)⟩ ds` (trapezoid).
    pub phi_work: f64,
    /// Itô sum `Σ ⟨X_{t_i}, ΔW_i⟩`.
    pub stochastic: f64,
    /// `∫ ‖σ‖²_HS ds`
    pub hs: f64,
    /// `Σ ⟨(X_{t_i}+X_{t_{i+1}})/2, Δη_i⟩`
    pub reflection_work: f64,
    /// `∫ ‖X⁻‖₁ ds`, right-point sum, so that `ν_t(E) = n ∫‖X⁻‖₁ds` for the
    /// implicit penalty schemes.
    pub neg_l1: f64,
    /// `∫ 𝓔(Ψ(X), Ψ(X)) ds` (trapezoid).
    pub psi_energy: f64,
}

impl PathIntegrals {
    fn new(n: usize) -> Self {
        PathIntegrals {
            drift: SpectralField::zeros(n),
            noise: SpectralField::zeros(n),
            dissipation: 0.0,
            phi_work: 0.0,
            stochastic: 0.0,
            hs: 0.0,
            reflection_work: 0.0,
            neg_l1: 0.0,
            psi_energy: 0.0,
        }
    }

    /// `‖X_t‖² − ‖X_0‖²` minus the right-hand side of the Itô formula.
    pub fn energy_residual(&self, l2_start: f64, l2_end: f64) -> f64 {
        l2_end * l2_end - l2_start * l2_start
            - (-2.0 * self.dissipation + 2.0 * self.phi_work + 2.0 * self.stochastic + self.hs + 2.0 * self.reflection_work)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub l2: f64,
    /// `‖X‖_{L^{1+r}}`
    pub lp: f64,
    /// `𝓔(Ψ(X), Ψ(X))`
    pub psi_energy: f64,
    /// `‖X⁻‖_{L¹}`
    pub neg_l1: f64,
    /// `ν_t(E)`
    pub nu_mass: f64,
    /// `‖X_t − X_0 − ∫drift − ∫σdW − η_t‖_{H⁻¹}`
    pub hm1_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub step: u64,
    pub x: SpectralField,
    pub grid: GridField,
    pub eta: SpectralField,
    pub drift_integral: SpectralField,
    pub noise_integral: SpectralField,
    pub diag: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub ledger: ReflectionLedger,
    pub integrals: PathIntegrals,
    pub trajectory_id: u64,
    pub steps: u64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory always holds the initial sample")
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }
}

/// Read-only view handed to observers after every step.
#[derive(Debug)]
pub struct Snapshot<'a> {
    pub step: u64,
    pub t: f64,
    pub x: &'a SpectralField,
    pub grid: &'a GridField,
    pub psi_grid: &'a GridField,
    pub ledger: &'a ReflectionLedger,
    pub integrals: &'a PathIntegrals,
}

/// Current state together with the nonlinearity evaluations it needs.
#[derive(Debug, Clone)]
struct Eval {
    x: SpectralField,
    grid: GridField,
    psi_grid: GridField,
    psi_hat: SpectralField,
    phi_grid: GridField,
    phi_hat: SpectralField,
}

struct StepOut {
    next: Eval,
    drift: Vec<f64>,
    nu_inc: Option<GridField>,
    pairing: f64,
    pairing_scale: f64,
}

/// A configured integrator for one equation on one basis.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    basis: &'a Basis,
    model: Model,
    cfg: SolverConfig,
    /// `λ_k / (1 + ελ_k)`
    lam_eff: Vec<f64>,
    /// Implicit linear coefficient `a + β` of the IMEX split.
    implicit_a: f64,
    phi_is_zero: bool,
}

impl<'a> Solver<'a> {
    pub fn new(basis: &'a Basis, model: Model, cfg: SolverConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        model.psi.validate().map_err(|e| SolverError::Config(e.to_string()))?;
        model.phi.validate().map_err(|e| SolverError::Config(e.to_string()))?;
        model.noise.validate()?;
        if !(model.penalty.n >= 0.0) {
            return Err(SolverError::Config("penalty must be >= 0".into()));
        }
        if cfg.scheme == Scheme::ImplicitNodal
            && (basis.spectrum() != Spectrum::Lattice || basis.n_modes() != basis.n_grid())
        {
            return Err(SolverError::Config(
                "implicit-nodal needs the lattice spectrum with n_modes == n_grid".into(),
            ));
        }
        let eps = cfg.resolvent_eps;
        let lam_eff = basis.eigenvalues().iter().map(|l| l / (1.0 + eps * l)).collect();
        let implicit_a = match cfg.scheme {
            Scheme::ImexLinear | Scheme::ImexPenalty => model.psi.linear_coefficient() + cfg.stabilization,
            _ => 0.0,
        };
        let phi_is_zero = model.phi == PhiSpec::zero();
        Ok(Solver { basis, model, cfg, lam_eff, implicit_a, phi_is_zero })
    }

    pub fn basis(&self) -> &'a Basis {
        self.basis
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Largest `|Ψ′|` over the value range of `grid`.
    fn max_psi_prime(&self, grid: &GridField) -> f64 {
        let m = grid.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let psi = &self.model.psi;
        [0.0, m, -m].iter().map(|&s| psi.prime(s)).fold(psi.prime(m * 0.5), f64::max)
    }

    /// Fails for explicit steps beyond `dt ≤ 0.5/(λ_N max|Ψ′| + n)`.
    pub fn check_stability(&self, x0: &SpectralField) -> Result<(), SolverError> {
        if self.cfg.scheme != Scheme::Explicit {
            return Ok(());
        }
        let g = self.basis.to_grid(x0)?;
        let lam_n = self.lam_eff[self.basis.n_modes() - 1];
        let bound = 0.5 / (lam_n * self.max_psi_prime(&g) + self.model.penalty.n);
        if self.cfg.dt > bound {
            return Err(SolverError::Unstable(format!(
                "explicit scheme needs dt <= {bound:.3e} for this initial range, got {:.3e}",
                self.cfg.dt
            )));
        }
        Ok(())
    }

    /// Non-fatal configuration warnings.
    pub fn warnings(&self, x0: &SpectralField) -> Vec<String> {
        let mut w = Vec::new();
        if let Ok(g) = self.basis.to_grid(x0) {
            match self.cfg.scheme {
                Scheme::ImexLinear | Scheme::ImexPenalty => {
                    let stiff = self.cfg.dt * self.lam_eff[self.basis.n_modes() - 1]
                        * (self.max_psi_prime(&g) - self.implicit_a).max(0.0);
                    if stiff > 1.0 {
                        w.push(format!(
                            "explicit remainder stiffness dt·λ_N·(max Ψ′ − a) = {stiff:.2} > 1; consider stabilization"
                        ));
                    }
                }
                Scheme::ImplicitNodal => {
                    if 1.0 + self.cfg.dt * self.model.phi.min_slope() < 0.0 {
                        w.push("s + dt Φ(s) is decreasing; the nodal step is not order preserving".into());
                    }
                }
                Scheme::Explicit => {}
            }
        }
        if self.cfg.scheme == Scheme::ImexLinear && self.model.penalty.n * self.cfg.dt > 1.0 {
            w.push("explicit penalty with n·dt > 1 overshoots; use the implicit-penalty scheme".into());
        }
        w
    }

    /// `𝒫_n[LΨ(x) + Φ⁽ⁿ⁾(x)]` evaluated pseudo-spectrally.
    pub fn drift(&self, x: &SpectralField) -> Result<SpectralField, SolverError> {
        let g = self.basis.to_grid(x)?;
        let pen = self.model.penalty.n;
        let psi_hat = self.basis.to_spectral(&self.model.psi.eval_grid(&g))?;
        let phi_hat = self.basis.to_spectral(&g.map(|s| self.model.phi.eval(s) + pen * neg_part(s)))?;
        let out: Vec<f64> = self
            .lam_eff
            .iter()
            .zip(psi_hat.coeffs().iter().zip(phi_hat.coeffs()))
            .map(|(l, (p, f))| -l * p + f)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::BlowUp {
                t: f64::NAN,
                step: 0,
                last_l2: self.basis.norm(x, Norm::L2).unwrap_or(f64::NAN),
                partial: Box::new(self.empty_trajectory(0)),
            });
        }
        Ok(SpectralField(out))
    }

    fn empty_trajectory(&self, id: u64) -> Trajectory {
        Trajectory {
            samples: Vec::new(),
            ledger: ReflectionLedger::new(self.basis),
            integrals: PathIntegrals::new(self.basis.n_modes()),
            trajectory_id: id,
            steps: 0,
        }
    }

    fn evaluate(&self, x: SpectralField, grid: GridField) -> Eval {
        let b = self.basis;
        let psi_grid = self.model.psi.eval_grid(&grid);
        let mut psi_hat = vec![0.0; b.n_modes()];
        b.to_spectral_into(psi_grid.values(), &mut psi_hat);
        let (phi_grid, phi_hat) = if self.phi_is_zero {
            (b.zeros_grid(), b.zeros_spectral())
        } else {
            let pg = self.model.phi.eval_grid(&grid);
            let mut ph = vec![0.0; b.n_modes()];
            b.to_spectral_into(pg.values(), &mut ph);
            (pg, SpectralField(ph))
        };
        Eval { x, grid, psi_grid, psi_hat: SpectralField(psi_hat), phi_grid, phi_hat }
    }

    fn eval_from_coeffs(&self, x: SpectralField) -> Eval {
        let mut g = vec![0.0; self.basis.n_grid()];
        self.basis.to_grid_into(x.coeffs(), &mut g);
        self.evaluate(x, GridField(g))
    }

    /// One step from `cur` with noise coefficients `dw`.
    fn advance(&self, cur: &Eval, dw: &[f64], step: u64) -> Result<StepOut, SolverError> {
        let b = self.basis;
        let n = b.n_modes();
        let dt = self.cfg.dt;
        let pen = self.model.penalty.n;
        let c = cur.x.coeffs();
        let psi = cur.psi_hat.coeffs();
        let phi = cur.phi_hat.coeffs();
        match self.cfg.scheme {
            Scheme::Explicit => {
                let drift: Vec<f64> = (0..n).map(|k| dt * (-self.lam_eff[k] * psi[k] + phi[k])).collect();
                let nu_inc = self.explicit_penalty(&cur.grid);
                let mut x: Vec<f64> = (0..n).map(|k| c[k] + drift[k] + dw[k]).collect();
                let (pairing, pairing_scale) = self.add_reflection(&mut x, nu_inc.as_ref(), &cur.psi_grid);
                Ok(StepOut { next: self.eval_from_coeffs(SpectralField(x)), drift, nu_inc, pairing, pairing_scale })
            }
            Scheme::ImexLinear => {
                let a = self.implicit_a;
                let nu_inc = self.explicit_penalty(&cur.grid);
                let mut eta_hat = vec![0.0; n];
                if let Some(inc) = &nu_inc {
                    b.to_spectral_into(inc.values(), &mut eta_hat);
                }
                let mut x = vec![0.0; n];
                let mut drift = vec![0.0; n];
                for k in 0..n {
                    let l = self.lam_eff[k];
                    let explicit = -l * (psi[k] - a * c[k]) + phi[k];
                    x[k] = (c[k] + dt * explicit + dw[k] + eta_hat[k]) / (1.0 + dt * a * l);
                    drift[k] = dt * (explicit - l * a * x[k]);
                }
                let (pairing, pairing_scale) = self.reflection_pairing(nu_inc.as_ref(), &cur.psi_grid);
                Ok(StepOut { next: self.eval_from_coeffs(SpectralField(x)), drift, nu_inc, pairing, pairing_scale })
            }
            Scheme::ImexPenalty => {
                let a = self.implicit_a;
                let mut x = vec![0.0; n];
                let mut drift = vec![0.0; n];
                for k in 0..n {
                    let l = self.lam_eff[k];
                    let explicit = -l * (psi[k] - a * c[k]) + phi[k];
                    x[k] = (c[k] + dt * explicit + dw[k]) / (1.0 + dt * a * l);
                    drift[k] = dt * (explicit - l * a * x[k]);
                }
                let mut g = vec![0.0; b.n_grid()];
                b.to_grid_into(&x, &mut g);
                let mut nu_inc = None;
                let mut pairing = (0.0, 0.0);
                if pen > 0.0 && g.iter().any(|v| *v < 0.0) {
                    let shrink = 1.0 / (1.0 + pen * dt);
                    let y: Vec<f64> = g.iter().map(|&v| if v < 0.0 { v * shrink } else { v }).collect();
                    let inc = GridField(y.iter().map(|&v| pen * dt * neg_part(v)).collect());
                    let psi_y = self.model.psi.eval_grid(&GridField(y));
                    pairing = self.reflection_pairing(Some(&inc), &psi_y);
                    let mut eta_hat = vec![0.0; n];
                    b.to_spectral_into(inc.values(), &mut eta_hat);
                    for (xk, e) in x.iter_mut().zip(&eta_hat) {
                        *xk += e;
                    }
                    b.to_grid_into(&x, &mut g);
                    nu_inc = Some(inc);
                }
                let next = self.evaluate(SpectralField(x), GridField(g));
                Ok(StepOut { next, drift, nu_inc, pairing: pairing.0, pairing_scale: pairing.1 })
            }
            Scheme::ImplicitNodal => self.advance_nodal(cur, dw, step),
        }
    }

    fn explicit_penalty(&self, grid: &GridField) -> Option<GridField> {
        let pen = self.model.penalty.n;
        if pen > 0.0 && grid.values().iter().any(|v| *v < 0.0) {
            Some(grid.map(|v| pen * self.cfg.dt * neg_part(v)))
        } else {
            None
        }
    }

    fn add_reflection(&self, x: &mut [f64], inc: Option<&GridField>, psi_grid: &GridField) -> (f64, f64) {
        if let Some(inc) = inc {
            let mut eta_hat = vec![0.0; x.len()];
            self.basis.to_spectral_into(inc.values(), &mut eta_hat);
            for (xk, e) in x.iter_mut().zip(&eta_hat) {
                *xk += e;
            }
        }
        self.reflection_pairing(inc, psi_grid)
    }

    fn reflection_pairing(&self, inc: Option<&GridField>, psi_grid: &GridField) -> (f64, f64) {
        match inc {
            None => (0.0, 0.0),
            Some(inc) => {
                let b = self.basis;
                let pairing = b.inner_grid(psi_grid, inc);
                let scale = b.norm(psi_grid, Norm::L1).unwrap_or(0.0) * b.integral(inc);
                (pairing, scale)
            }
        }
    }

    /// Backward Euler on the grid:
    /// `Y = u + dt Φ(u) + ΔW + dt[(1−εA)^{-1} A Ψ(Y) + n Y⁻]` with `A` the
    /// three-point Laplacian, solved in the multiplied-out tridiagonal form
    /// `(1−εA)(Y − dt n Y⁻ − rhs) − dt A Ψ(Y) = 0`.
    fn advance_nodal(&self, cur: &Eval, dw: &[f64], step: u64) -> Result<StepOut, SolverError> {
        let b = self.basis;
        let n = b.n_modes();
        let m = b.n_grid();
        let dt = self.cfg.dt;
        let pen = self.model.penalty.n;
        let mut dw_grid = vec![0.0; m];
        b.to_grid_into(dw, &mut dw_grid);
        let rhs: Vec<f64> = (0..m).map(|j| cur.grid.values()[j] + dt * cur.phi_grid.values()[j] + dw_grid[j]).collect();
        let mut y = rhs.clone();
        self.newton_nodal(&rhs, &mut y, step)?;
        let inc = if pen > 0.0 && y.iter().any(|v| *v < 0.0) {
            Some(GridField(y.iter().map(|&v| pen * dt * neg_part(v)).collect()))
        } else {
            None
        };
        let mut x = vec![0.0; n];
        b.to_spectral_into(&y, &mut x);
        let next = self.evaluate(SpectralField(x), GridField(y));
        let drift: Vec<f64> = (0..n)
            .map(|k| dt * (-self.lam_eff[k] * next.psi_hat.coeffs()[k] + cur.phi_hat.coeffs()[k]))
            .collect();
        let (pairing, pairing_scale) = self.reflection_pairing(inc.as_ref(), &next.psi_grid);
        Ok(StepOut { next, drift, nu_inc: inc, pairing, pairing_scale })
    }

    fn nodal_residual(&self, rhs: &[f64], y: &[f64], out: &mut [f64]) {
        let m = y.len();
        let h = self.basis.h();
        let c = 1.0 / (h * h);
        let dt = self.cfg.dt;
        let eps = self.cfg.resolvent_eps;
        let pen = self.model.penalty.n;
        let psi = &self.model.psi;
        let w = |j: usize| y[j] - dt * pen * neg_part(y[j]) - rhs[j];
        let lap = |f: &dyn Fn(usize) -> f64, j: usize| {
            let left = if j > 0 { f(j - 1) } else { 0.0 };
            let right = if j + 1 < m { f(j + 1) } else { 0.0 };
            c * (left - 2.0 * f(j) + right)
        };
        let p = |j: usize| psi.eval(y[j]);
        for j in 0..m {
            let mut r = w(j) - dt * lap(&p, j);
            if eps > 0.0 {
                r -= eps * lap(&w, j);
            }
            out[j] = r;
        }
    }

    fn newton_nodal(&self, rhs: &[f64], y: &mut [f64], step: u64) -> Result<(), SolverError> {
        let m = y.len();
        let h = self.basis.h();
        let c = 1.0 / (h * h);
        let dt = self.cfg.dt;
        let eps = self.cfg.resolvent_eps;
        let pen = self.model.penalty.n;
        let psi = &self.model.psi;
        let scale = (1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()))) * (1.0 + 2.0 * eps * c);
        let tol = self.cfg.newton_tol * scale;
        let mut res = vec![0.0; m];
        let mut trial = vec![0.0; m];
        let mut trial_res = vec![0.0; m];
        let (mut lower, mut diag, mut upper, mut delta) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        self.nodal_residual(rhs, y, &mut res);
        let mut norm = inf_norm(&res);
        for _ in 0..100 {
            if norm <= tol {
                return Ok(());
            }
            for j in 0..m {
                let pj = |i: usize| 1.0 + if y[i] < 0.0 { dt * pen } else { 0.0 };
                let dj = |i: usize| psi.prime(y[i]);
                diag[j] = (1.0 + 2.0 * eps * c) * pj(j) + 2.0 * dt * c * dj(j);
                lower[j] = if j > 0 { -eps * c * pj(j - 1) - dt * c * dj(j - 1) } else { 0.0 };
                upper[j] = if j + 1 < m { -eps * c * pj(j + 1) - dt * c * dj(j + 1) } else { 0.0 };
            }
            thomas(&lower, &diag, &upper, &res, &mut delta);
            let mut step_len = 1.0;
            loop {
                for j in 0..m {
                    trial[j] = y[j] - step_len * delta[j];
                }
                self.nodal_residual(rhs, &trial, &mut trial_res);
                let tn = inf_norm(&trial_res);
                if tn < norm || step_len < 1e-6 || !tn.is_finite() && step_len < 1e-6 {
                    y.copy_from_slice(&trial);
                    res.copy_from_slice(&trial_res);
                    norm = tn;
                    break;
                }
                step_len *= 0.5;
            }
            if !norm.is_finite() {
                break;
            }
        }
        if norm <= tol {
            Ok(())
        } else {
            Err(SolverError::NewtonFailed { step, residual: norm })
        }
    }

    fn diagnostics(&self, ev: &Eval, ledger: &ReflectionLedger, integrals: &PathIntegrals, x0: &SpectralField) -> Diagnostics {
        let b = self.basis;
        let p = 1.0 + self.model.psi.r;
        let resid = SpectralField(
            (0..b.n_modes())
                .map(|k| {
                    ev.x.coeffs()[k] - x0.coeffs()[k] - integrals.drift.coeffs()[k] - integrals.noise.coeffs()[k]
                        - ledger.eta.coeffs()[k]
                })
                .collect(),
        );
        Diagnostics {
            l2: b.norm(&ev.x, Norm::L2).unwrap_or(f64::NAN),
            lp: lp_power(b.h(), ev.grid.values(), p).powf(1.0 / p),
            psi_energy: b.energy(&ev.psi_hat, &ev.psi_hat),
            neg_l1: b.h() * ev.grid.values().iter().map(|v| neg_part(*v)).sum::<f64>(),
            nu_mass: ledger.mass(b),
            hm1_residual: b.norm(&resid, Norm::Hm1).unwrap_or(f64::NAN),
        }
    }

    fn sample(&self, step: u64, ev: &Eval, ledger: &ReflectionLedger, integrals: &PathIntegrals, x0: &SpectralField) -> Sample {
        Sample {
            t: step as f64 * self.cfg.dt,
            step,
            x: ev.x.clone(),
            grid: ev.grid.clone(),
            eta: ledger.eta.clone(),
            drift_integral: integrals.drift.clone(),
            noise_integral: integrals.noise.clone(),
            diag: self.diagnostics(ev, ledger, integrals, x0),
        }
    }

    /// Single path driven by `noise`.
    pub fn simulate(&self, x0: &SpectralField, noise: &NoisePath) -> Result<Trajectory, SolverError> {
        Ok(simulate_coupled(&[self], std::slice::from_ref(x0), noise, |_| {})?.remove(0))
    }

    /// Two paths from `x0` and `y0` sharing one noise realization.
    pub fn simulate_pair(&self, x0: &SpectralField, y0: &SpectralField, noise: &NoisePath) -> Result<(Trajectory, Trajectory), SolverError> {
        let mut v = simulate_coupled(&[self, self], &[x0.clone(), y0.clone()], noise, |_| {})?;
        let second = v.pop().expect("two trajectories");
        Ok((v.pop().expect("two trajectories"), second))
    }

    /// One path per penalty level, all driven by the same noise.
    pub fn simulate_penalty_sweep(&self, x0: &SpectralField, levels: &[f64], noise: &NoisePath) -> Result<Vec<Trajectory>, SolverError> {
        let solvers = self.penalty_family(levels)?;
        let refs: Vec<&Solver> = solvers.iter().collect();
        simulate_coupled(&refs, &vec![x0.clone(); levels.len()], noise, |_| {})
    }

    /// Copies of this solver at the given penalty levels.
    pub fn penalty_family(&self, levels: &[f64]) -> Result<Vec<Solver<'a>>, SolverError> {
        levels
            .iter()
            .map(|&n| {
                let pen = PenaltySpec::new(n).map_err(|e| SolverError::Config(e.to_string()))?;
                Solver::new(self.basis, Model { penalty: pen, ..self.model.clone() }, self.cfg.clone())
            })
            .collect()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

/// Tridiagonal solve `(lower, diag, upper) x = rhs`.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], x: &mut [f64]) {
    let m = diag.len();
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    cp[0] = upper[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for i in 1..m {
        let den = diag[i] - lower[i] * cp[i - 1];
        cp[i] = upper[i] / den;
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den;
    }
    x[m - 1] = dp[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
}

/// Steps several equations in lockstep on one noise realization.
///
/// All solvers must share the basis dimensions, time grid and noise
/// amplitudes; `observer` sees every system after the initial state and
/// after each step.
pub fn simulate_coupled<F>(
    solvers: &[&Solver<'_>],
    x0s: &[SpectralField],
    noise: &NoisePath,
    mut observer: F,
) -> Result<Vec<Trajectory>, SolverError>
where
    F: FnMut(&[Snapshot<'_>]),
{
    let first = *solvers.first().ok_or_else(|| SolverError::Config("no solvers".into()))?;
    if x0s.len() != solvers.len() {
        return Err(SolverError::Config("one initial condition per solver".into()));
    }
    let basis = first.basis;
    let n = basis.n_modes();
    let cfg = &first.cfg;
    for s in solvers {
        if s.basis.n_modes() != n || s.basis.n_grid() != basis.n_grid() || s.basis.spectrum() != basis.spectrum() {
            return Err(SolverError::Config("coupled solvers must share the basis".into()));
        }
        if s.cfg.dt != cfg.dt || s.cfg.t_end != cfg.t_end || s.cfg.record_every != cfg.record_every {
            return Err(SolverError::Config("coupled solvers must share the time grid".into()));
        }
    }
    if (noise.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(SolverError::Config(format!("noise path step {} differs from dt {}", noise.dt(), cfg.dt)));
    }
    if noise.q().len() != n {
        return Err(SolverError::Config("noise path has the wrong number of modes".into()));
    }
    for x0 in x0s {
        if x0.len() != n {
            return Err(BasisError::DimensionMismatch { expected: n, got: x0.len() }.into());
        }
    }
    for (s, x0) in solvers.iter().zip(x0s) {
        s.check_stability(x0)?;
    }
    let q2: f64 = noise.q().iter().map(|q| q * q).sum();
    let n_steps = cfg.n_steps();
    let record = cfg.record_every as u64;

    struct Sys<'s> {
        ev: Eval,
        ledger: ReflectionLedger,
        integrals: PathIntegrals,
        samples: Vec<Sample>,
        x0: &'s SpectralField,
        dissipation_left: f64,
        phi_work_left: f64,
        psi_energy_left: f64,
    }

    let mut systems: Vec<Sys> = solvers
        .iter()
        .zip(x0s)
        .map(|(s, x0)| {
            let ev = s.eval_from_coeffs(x0.clone());
            let ledger = ReflectionLedger::new(basis);
            let integrals = PathIntegrals::new(n);
            let samples = vec![s.sample(0, &ev, &ledger, &integrals, x0)];
            Sys {
                dissipation_left: dissipation(s, &ev),
                phi_work_left: ev.x.dot(&ev.phi_hat),
                psi_energy_left: basis.energy(&ev.psi_hat, &ev.psi_hat),
                ev,
                ledger,
                integrals,
                samples,
                x0,
            }
        })
        .collect();

    let notify = |systems: &[Sys], step: u64, observer: &mut F| {
        let snaps: Vec<Snapshot> = systems
            .iter()
            .map(|s| Snapshot {
                step,
                t: step as f64 * cfg.dt,
                x: &s.ev.x,
                grid: &s.ev.grid,
                psi_grid: &s.ev.psi_grid,
                ledger: &s.ledger,
                integrals: &s.integrals,
            })
            .collect();
        observer(&snaps);
    };
    notify(&systems, 0, &mut observer);

    let mut dw = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for step in 0..n_steps {
        noise.increment_into(step, &mut dw, &mut scratch);
        for (s, sys) in solvers.iter().zip(systems.iter_mut()) {
            let out = match s.advance(&sys.ev, &dw, step) {
                Ok(o) => o,
                Err(SolverError::NewtonFailed { residual, .. }) => {
                    return Err(SolverError::NewtonFailed { step, residual });
                }
                Err(e) => return Err(e),
            };
            let dt = cfg.dt;
            let it = &mut sys.integrals;
            it.stochastic += sys.ev.x.coeffs().iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>();
            it.hs += q2 * dt;
            for k in 0..n {
                it.drift.coeffs_mut()[k] += out.drift[k];
                it.noise.coeffs_mut()[k] += dw[k];
            }
            if let Some(inc) = &out.nu_inc {
                let mut eta_hat = vec![0.0; n];
                basis.to_spectral_into(inc.values(), &mut eta_hat);
                let inc_field = SpectralField(eta_hat);
                let mid: f64 = (0..n).map(|k| 0.5 * (sys.ev.x.coeffs()[k] + out.next.x.coeffs()[k]) * inc_field.coeffs()[k]).sum();
                it.reflection_work += mid;
                let l = &mut sys.ledger;
                for (a, b) in l.nu_grid.values_mut().iter_mut().zip(inc.values()) {
                    *a += b;
                }
                l.eta.axpy(1.0, &inc_field);
                l.max_increment_hm1 = l.max_increment_hm1.max(basis.norm(&inc_field, Norm::Hm1).unwrap_or(0.0));
            }
            sys.ledger.pairing_log.push(out.pairing);
            sys.ledger.pairing_total += out.pairing;
            sys.ledger.pairing_scale += out.pairing_scale;

            let next = out.next;
            if !next.x.is_finite() || next.grid.values().iter().any(|v| !v.is_finite()) {
                let last_l2 = sys.samples.last().map(|s| s.diag.l2).unwrap_or(f64::NAN);
                let partial = Trajectory {
                    samples: std::mem::take(&mut sys.samples),
                    ledger: sys.ledger.clone(),
                    integrals: sys.integrals.clone(),
                    trajectory_id: noise.trajectory(),
                    steps: step,
                };
                return Err(SolverError::BlowUp { t: (step + 1) as f64 * dt, step: step + 1, last_l2, partial: Box::new(partial) });
            }
            let d_right = dissipation(s, &next);
            let p_right = next.x.dot(&next.phi_hat);
            let e_right = basis.energy(&next.psi_hat, &next.psi_hat);
            let it = &mut sys.integrals;
            it.dissipation += 0.5 * dt * (sys.dissipation_left + d_right);
            it.phi_work += 0.5 * dt * (sys.phi_work_left + p_right);
            it.psi_energy += 0.5 * dt * (sys.psi_energy_left + e_right);
            it.neg_l1 += dt * basis.h() * next.grid.values().iter().map(|v| neg_part(*v)).sum::<f64>();
            sys.dissipation_left = d_right;
            sys.phi_work_left = p_right;
            sys.psi_energy_left = e_right;
            sys.ev = next;
            let done = step + 1;
            if done % record == 0 || done == n_steps {
                let smp = s.sample(done, &sys.ev, &sys.ledger, &sys.integrals, sys.x0);
                sys.samples.push(smp);
            }
        }
        notify(&systems, step + 1, &mut observer);
    }

    Ok(systems
        .into_iter()
        .map(|s| Trajectory {
            samples: s.samples,
            ledger: s.ledger,
            integrals: s.integrals,
            trajectory_id: noise.trajectory(),
            steps: n_steps,
        })
        .collect())
}

/// `𝓔(X, Ψ(X))` with the (possibly regularized) eigenvalues.
fn dissipation(s: &Solver<'_>, ev: &Eval) -> f64 {
    s.lam_eff.iter().zip(ev.x.coeffs().iter().zip(ev.psi_hat.coeffs())).map(|(l, (a, b))| l * a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn heat_model() -> Model {
        Model {
            psi: PsiSpec::linear(1.0).unwrap(),
            phi: PhiSpec::zero(),
            penalty: PenaltySpec::off(),
            noise: NoiseSpec::silent(0),
        }
    }

    fn cfg(scheme: Scheme, dt: f64, t_end: f64) -> SolverConfig {
        SolverConfig { dt, t_end, scheme, record_every: 1, ..SolverConfig::default() }
    }

    fn quiet(n: usize, dt: f64) -> NoisePath {
        NoisePath::new(&NoiseSpec::silent(0), n, 0, dt, 1).unwrap()
    }

    #[test]
    fn heat_drift_on_first_mode() {
        let b = Basis::new(8, 17).unwrap();
        let s = Solver::new(&b, heat_model(), cfg(Scheme::ImexLinear, 1e-3, 1e-3)).unwrap();
        let d = s.drift(&SpectralField::mode(8, 1, 1.0)).unwrap();
        assert!((d.coeffs()[0] + PI * PI).abs() < 1e-10);
        assert!(d.coeffs()[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn penalty_inactive_on_nonnegative_state() {
        let b = Basis::new(8, 17).unwrap();
        let model = Model { penalty: PenaltySpec::new(100.0).unwrap(), ..heat_model() };
        let with = Solver::new(&b, model, cfg(Scheme::ImexLinear, 1e-3, 1e-3)).unwrap();
        let without = Solver::new(&b, heat_model(), cfg(Scheme::ImexLinear, 1e-3, 1e-3)).unwrap();
        let x = SpectralField::mode(8, 1, 0.5);
        assert_eq!(with.drift(&x).unwrap(), without.drift(&x).unwrap());
    }

    #[test]
    fn large_resolvent_parameter_switches_off_diffusion() {
        let b = Basis::new(8, 17).unwrap();
        let x = SpectralField(vec![1.0, 0.5, 0.0, -0.2, 0.0, 0.0, 0.1, 0.0]);
        let mut last = f64::INFINITY;
        for eps in [1.0, 1e2, 1e4, 1e6] {
            let c = SolverConfig { resolvent_eps: eps, ..cfg(Scheme::ImexLinear, 1e-3, 1e-3) };
            let d = Solver::new(&b, heat_model(), c).unwrap().drift(&x).unwrap();
            let size = d.coeffs().iter().map(|v| v.abs()).fold(0.0, f64::max);
            // multiplier λ_k/(1+ελ_k) ≤ 1/ε
            assert!(size <= 1.0 / eps * 1.0 + 1e-12, "eps={eps} size={size}");
            assert!(size < last);
            last = size;
        }
    }

    #[test]
    fn implicit_penalty_substep_closed_form() {
        // one grid node, ψ ≡ 0 contribution is irrelevant for a constant negative state on one mode
        let b = Basis::new(1, 1).unwrap();
        let model = Model { penalty: PenaltySpec::new(50.0).unwrap(), ..heat_model() };
        let c = SolverConfig { stabilization: 0.0, ..cfg(Scheme::ImexPenalty, 1e-2, 1e-2) };
        let s = Solver::new(&b, model, c).unwrap();
        let x0 = SpectralField(vec![-0.3]);
        let traj = s.simulate(&x0, &quiet(1, 1e-2)).unwrap();
        // first the implicit heat step, then y = x/(1+n dt)
        let lam = b.eigenvalues()[0];
        let heat = -0.3 / (1.0 + 1e-2 * lam);
        let expect = heat / (1.0 + 50.0 * 1e-2);
        assert!((traj.last().x.coeffs()[0] - expect).abs() < 1e-14);
        let nu = traj.ledger.nu_grid.values()[0];
        assert!((nu - 50.0 * 1e-2 * (-expect) * b.mode_row(1)[0]).abs() < 1e-14);
    }

    #[test]
    fn heat_decay_first_order() {
        let b = Basis::new(8, 17).unwrap();
        let mut errs = Vec::new();
        for dt in [2e-4, 1e-4] {
            let s = Solver::new(&b, heat_model(), cfg(Scheme::ImexLinear, dt, 0.5)).unwrap();
            let traj = s.simulate(&SpectralField::mode(8, 1, 1.0), &quiet(8, dt)).unwrap();
            let err = traj
                .samples
                .iter()
                .map(|smp| (smp.x.coeffs()[0] - (-PI * PI * smp.t).exp()).abs())
                .fold(0.0, f64::max);
            assert!(err <= 5.0 * dt, "dt={dt} err={err}");
            errs.push(err);
        }
        let ratio = errs[0] / errs[1];
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn zero_drift_zero_noise_is_stationary() {
        let b = Basis::new(4, 9).unwrap();
        let model = Model { psi: PsiSpec::linear(1.0).unwrap(), ..heat_model() };
        let s = Solver::new(&b, model, cfg(Scheme::ImexLinear, 1e-3, 0.1)).unwrap();
        let traj = s.simulate(&b.zeros_spectral(), &quiet(4, 1e-3)).unwrap();
        assert!(traj.samples.iter().all(|smp| smp.x.coeffs().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn ledger_is_zero_for_nonnegative_start_without_noise() {
        let b = Basis::lattice(16).unwrap();
        let model = Model { psi: PsiSpec::power(3.0, 1.0, 0.1).unwrap(), penalty: PenaltySpec::new(1e3).unwrap(), ..heat_model() };
        let s = Solver::new(&b, model, cfg(Scheme::ImplicitNodal, 1e-4, 1e-4)).unwrap();
        let traj = s.simulate(&SpectralField::mode(16, 1, 1.0), &quiet(16, 1e-4)).unwrap();
        assert!(traj.ledger.nu_grid.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nodal_scheme_requires_lattice() {
        let b = Basis::new(8, 17).unwrap();
        assert!(Solver::new(&b, heat_model(), cfg(Scheme::ImplicitNodal, 1e-3, 1e-3)).is_err());
    }

    #[test]
    fn explicit_stability_guard() {
        let b = Basis::new(32, 129).unwrap();
        let s = Solver::new(&b, heat_model(), cfg(Scheme::Explicit, 1e-3, 1e-2)).unwrap();
        let x0 = SpectralField::mode(32, 1, 1.0);
        assert!(matches!(s.simulate(&x0, &quiet(32, 1e-3)), Err(SolverError::Unstable(_))));
        let ok = Solver::new(&b, heat_model(), cfg(Scheme::Explicit, 1e-5, 1e-4)).unwrap();
        assert!(ok.simulate(&x0, &quiet(32, 1e-5)).is_ok());
    }

    #[test]
    fn blow_up_is_reported_with_partial_path() {
        // anti-diffusive drift far beyond explicit stability
        let b = Basis::new(4, 9).unwrap();
        let model = Model { phi: PhiSpec::linear(1e4), ..heat_model() };
        let s = Solver::new(&b, model, cfg(Scheme::ImexLinear, 0.1, 100.0)).unwrap();
        match s.simulate(&SpectralField::mode(4, 1, 1.0), &quiet(4, 0.1)) {
            Err(SolverError::BlowUp { partial, .. }) => assert!(!partial.samples.is_empty()),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn pair_with_equal_starts_is_bitwise_identical() {
        let b = Basis::lattice(16).unwrap();
        let model = Model {
            psi: PsiSpec::power(3.0, 1.0, 0.1).unwrap(),
            penalty: PenaltySpec::new(100.0).unwrap(),
            noise: NoiseSpec::power(0.3, 1.0, 5).unwrap(),
            ..heat_model()
        };
        let s = Solver::new(&b, model.clone(), SolverConfig { record_every: 10, ..cfg(Scheme::ImplicitNodal, 1e-3, 0.2) }).unwrap();
        let noise = NoisePath::new(&model.noise, 16, 3, 1e-3, 1).unwrap();
        let x0 = SpectralField::mode(16, 1, 0.2);
        let (a, c) = s.simulate_pair(&x0, &x0, &noise).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn solution_identity_residual_is_rounding_level() {
        let b = Basis::new(16, 33).unwrap();
        let model = Model {
            psi: PsiSpec::power(3.0, 1.0, 0.5).unwrap(),
            phi: PhiSpec::linear(-0.5),
            penalty: PenaltySpec::new(200.0).unwrap(),
            noise: NoiseSpec::power(0.3, 1.0, 4).unwrap(),
        };
        for scheme in [Scheme::ImexLinear, Scheme::ImexPenalty] {
            let c = SolverConfig { record_every: 50, stabilization: 1.0, ..cfg(scheme, 1e-4, 0.2) };
            let s = Solver::new(&b, model.clone(), c).unwrap();
            let noise = NoisePath::new(&model.noise, 16, 0, 1e-4, 1).unwrap();
            let traj = s.simulate(&SpectralField::mode(16, 1, 0.1), &noise).unwrap();
            assert!(traj.ledger.mass(&b) > 0.0, "{scheme}: reflection should activate");
            for smp in &traj.samples {
                assert!(smp.diag.hm1_residual < 1e-12, "{scheme}: {}", smp.diag.hm1_residual);
            }
        }
    }

    #[test]
    fn initial_condition_parsing_round_trip() {
        for s in ["zero", "mode:3:0.5", "const:0.25", "bump:0.5:0.2:1.5", "coeffs:1.0,-0.5,0.25"] {
            let ic: InitialCondition = s.parse().unwrap();
            assert_eq!(ic.to_string().parse::<InitialCondition>().unwrap(), ic);
        }
        assert!("mode:x:1".parse::<InitialCondition>().is_err());
        assert!("spiral".parse::<InitialCondition>().is_err());
    }

    #[test]
    fn clipped_initial_data_on_lattice_is_nonnegative() {
        let b = Basis::lattice(32).unwrap();
        let x0 = InitialCondition::Mode { k: 2, amplitude: 1.0 }.build(&b, true).unwrap();
        assert!(b.to_grid(&x0).unwrap().values().iter().all(|v| *v >= -1e-14));
    }
}
