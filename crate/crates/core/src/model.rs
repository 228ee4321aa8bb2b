//! Nonlinearities of the equation and sampling-based assumption checkers.
//!
//! `Ψ(s) = α₁ s|s|^{r−1} + α₂ s + α₃ |s|^{r′−1} s` is the porous-medium
//! nonlinearity, `Φ` a Lipschitz drift, and `Φ⁽ⁿ⁾(s) = Φ(s) + n s⁻` its
//! penalized version. All checker constants are estimates over finite
//! samples; they cannot certify inequalities over all of ℝ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{Basis, GridField, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid Ψ parameters: {0}")]
    InvalidPsi(String),
    #[error("invalid Φ parameters: {0}")]
    InvalidPhi(String),
    #[error("penalty strength must be finite and nonnegative, got {0}")]
    InvalidPenalty(f64),
}

/// `|s|^p` with fast paths for the exponents that show up in practice.
#[inline]
pub(crate) fn abs_pow(s: f64, p: f64) -> f64 {
    let a = s.abs();
    if p == 0.0 {
        1.0
    } else if p == 1.0 {
        a
    } else if p == 2.0 {
        a * a
    } else if p == 3.0 {
        a * a * a
    } else {
        a.powf(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub r: f64,
    pub r_prime: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Cap applied to `Ψ′` where the `α₃` term diverges (at `s = 0`).
    pub prime_cap: f64,
}

impl Default for PsiSpec {
    fn default() -> Self {
        PsiSpec { r: 3.0, r_prime: 0.5, alpha1: 1.0, alpha2: 0.0, alpha3: 0.0, prime_cap: 1e6 }
    }
}

impl PsiSpec {
    pub fn new(r: f64, r_prime: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self, ModelError> {
        let spec = PsiSpec { r, r_prime, alpha1, alpha2, alpha3, prime_cap: 1e6 };
        spec.validate()?;
        Ok(spec)
    }

    /// `α₁ s|s|^{r−1} + α₂ s`.
    pub fn power(r: f64, alpha1: f64, alpha2: f64) -> Result<Self, ModelError> {
        Self::new(r, 0.5, alpha1, alpha2, 0.0)
    }

    /// `Ψ(s) = a s`.
    pub fn linear(a: f64) -> Result<Self, ModelError> {
        Self::new(1.0, 0.5, a, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidPsi(m.to_string()));
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return bad("r must be >= 1");
        }
        if !(self.r_prime > 0.0 && self.r_prime < 1.0) {
            return bad("r_prime must lie in (0,1)");
        }
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite()) {
            return bad("alpha1 must be > 0");
        }
        if !(self.alpha2 >= 0.0 && self.alpha3 >= 0.0) {
            return bad("alpha2 and alpha3 must be >= 0");
        }
        if !(self.prime_cap > 0.0) {
            return bad("prime_cap must be > 0");
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        let mut v = self.alpha1 * s * abs_pow(s, self.r - 1.0) + self.alpha2 * s;
        if self.alpha3 != 0.0 && s != 0.0 {
            v += self.alpha3 * s * abs_pow(s, self.r_prime - 1.0);
        }
        v
    }

    #[inline]
    pub fn prime(&self, s: f64) -> f64 {
        let mut d = self.alpha1 * self.r * abs_pow(s, self.r - 1.0) + self.alpha2;
        if self.alpha3 != 0.0 {
            d += if s == 0.0 {
                self.prime_cap
            } else {
                self.alpha3 * self.r_prime * abs_pow(s, self.r_prime - 1.0)
            };
        }
        d.min(self.prime_cap)
    }

    /// Coefficient of the purely linear part of `Ψ`.
    pub fn linear_coefficient(&self) -> f64 {
        self.alpha2 + if self.r == 1.0 { self.alpha1 } else { 0.0 }
    }

    pub fn is_linear(&self) -> bool {
        self.r == 1.0 && self.alpha3 == 0.0
    }

    pub fn eval_grid(&self, x: &GridField) -> GridField {
        x.map(|s| self.eval(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiKind {
    /// `Φ(s) = slope·s + offset`
    Linear { slope: f64, offset: f64 },
    /// `Φ(s) = offset + slope·s + amplitude·tanh(s)`
    AffineSigmoid { offset: f64, slope: f64, amplitude: f64 },
    /// Piecewise-linear interpolation, linear extrapolation by the end slopes.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    pub kind: PhiKind,
}

impl Default for PhiSpec {
    fn default() -> Self {
        PhiSpec::zero()
    }
}

impl PhiSpec {
    pub fn zero() -> Self {
        PhiSpec { kind: PhiKind::Linear { slope: 0.0, offset: 0.0 } }
    }

    pub fn linear(slope: f64) -> Self {
        PhiSpec { kind: PhiKind::Linear { slope, offset: 0.0 } }
    }

    pub fn affine(slope: f64, offset: f64) -> Self {
        PhiSpec { kind: PhiKind::Linear { slope, offset } }
    }

    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        let spec = PhiSpec { kind: PhiKind::Tabulated { knots, values } };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match &self.kind {
            PhiKind::Linear { slope, offset } => {
                if !(slope.is_finite() && offset.is_finite()) {
                    return Err(ModelError::InvalidPhi("non-finite linear coefficients".into()));
                }
            }
            PhiKind::AffineSigmoid { offset, slope, amplitude } => {
                if ![offset, slope, amplitude].iter().all(|v| v.is_finite()) {
                    return Err(ModelError::InvalidPhi("non-finite sigmoid coefficients".into()));
                }
            }
            PhiKind::Tabulated { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return Err(ModelError::InvalidPhi("table needs >= 2 knots and matching values".into()));
                }
                if !knots.windows(2).all(|w| w[1] > w[0]) {
                    return Err(ModelError::InvalidPhi("knots must be strictly increasing".into()));
                }
                if !values.iter().all(|v| v.is_finite()) {
                    return Err(ModelError::InvalidPhi("non-finite table value".into()));
                }
            }
        }
        Ok(())
    }

    /// The same drift shifted down by `shift`, i.e. `Φ − shift`.
    pub fn shifted(&self, shift: f64) -> PhiSpec {
        let kind = match &self.kind {
            PhiKind::Linear { slope, offset } => PhiKind::Linear { slope: *slope, offset: offset - shift },
            PhiKind::AffineSigmoid { offset, slope, amplitude } => {
                PhiKind::AffineSigmoid { offset: offset - shift, slope: *slope, amplitude: *amplitude }
            }
            PhiKind::Tabulated { knots, values } => {
                PhiKind::Tabulated { knots: knots.clone(), values: values.iter().map(|v| v - shift).collect() }
            }
        };
        PhiSpec { kind }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match &self.kind {
            PhiKind::Linear { slope, offset } => slope * s + offset,
            PhiKind::AffineSigmoid { offset, slope, amplitude } => offset + slope * s + amplitude * s.tanh(),
            PhiKind::Tabulated { knots, values } => {
                let n = knots.len();
                // index of the segment [knots[i], knots[i+1]] used for s
                let i = match knots.partition_point(|k| *k <= s) {
                    0 => 0,
                    p if p >= n => n - 2,
                    p => p - 1,
                };
                let t = (s - knots[i]) / (knots[i + 1] - knots[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    fn slopes(&self) -> (f64, f64) {
        match &self.kind {
            PhiKind::Linear { slope, .. } => (*slope, *slope),
            PhiKind::AffineSigmoid { slope, amplitude, .. } => {
                // tanh' ranges over (0, 1]
                let a = slope + amplitude;
                (slope.min(a), slope.max(a))
            }
            PhiKind::Tabulated { knots, values } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s))),
        }
    }

    /// Lipschitz constant `l₀`.
    pub fn lipschitz(&self) -> f64 {
        let (lo, hi) = self.slopes();
        lo.abs().max(hi.abs())
    }

    /// One-sided constant `K` with `⟨Φ(x)−Φ(y), 1_{x>y}⟩ ≤ K μ((x−y)⁺)`;
    /// for a scalar map this is the supremum of its slope.
    pub fn one_sided(&self) -> f64 {
        self.slopes().1
    }

    /// Infimum of the slope (enters implicit-scheme monotonicity guards).
    pub fn min_slope(&self) -> f64 {
        self.slopes().0
    }

    pub fn eval_grid(&self, x: &GridField) -> GridField {
        x.map(|s| self.eval(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PenaltySpec {
    pub n: f64,
}

impl PenaltySpec {
    pub fn new(n: f64) -> Result<Self, ModelError> {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(ModelError::InvalidPenalty(n));
        }
        Ok(PenaltySpec { n })
    }

    pub fn off() -> Self {
        PenaltySpec { n: 0.0 }
    }

    pub fn is_active(&self) -> bool {
        self.n > 0.0
    }
}

/// `s⁻ = max(−s, 0)`
#[inline]
pub fn neg_part(s: f64) -> f64 {
    (-s).max(0.0)
}

pub fn phi_eval(s: f64, spec: &PhiSpec) -> f64 {
    spec.eval(s)
}

/// `Φ⁽ⁿ⁾(s) = Φ(s) + n s⁻`
pub fn penalized_phi(s: f64, spec: &PhiSpec, pen: &PenaltySpec) -> f64 {
    spec.eval(s) + pen.n * neg_part(s)
}

pub fn psi_eval(s: f64, spec: &PsiSpec) -> f64 {
    spec.eval(s)
}

pub fn psi_prime(s: f64, spec: &PsiSpec) -> f64 {
    spec.prime(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiGrowthReport {
    /// Largest `c₁` with `(s₂−s₁)(Ψ(s₂)−Ψ(s₁)) ≥ c₁|s₂−s₁|^{r+1}` on the samples.
    pub c1_est: f64,
    /// Largest `c₁′` with `(s₂−s₁)(Ψ(s₂)−Ψ(s₁)) ≥ c₁′|s₂−s₁|²` on the samples.
    pub c1_prime_est: f64,
    /// Smallest `c₂` with `Ψ′(s) ≤ c₂(1+|s|^{r−1})` on the samples.
    pub c2_est: f64,
    /// Sample pairs `(s₁, s₂)` where monotonicity fails, plus points with `Ψ′ < 0`.
    pub violations: Vec<(f64, f64)>,
    pub psi_zero: f64,
    pub n_samples: usize,
}

impl PsiGrowthReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty() && self.c1_est > 0.0 && self.c2_est.is_finite() && self.psi_zero == 0.0
    }
}

/// Pairwise scan of the monotonicity and growth inequalities on `n_samples` uniform points of `range`.
pub fn check_psi_growth(spec: &PsiSpec, range: (f64, f64), n_samples: usize) -> PsiGrowthReport {
    let n = n_samples.max(2);
    let (lo, hi) = range;
    let pts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<f64> = pts.iter().map(|&s| spec.eval(s)).collect();
    let mut c1 = f64::INFINITY;
    let mut c1p = f64::INFINITY;
    let mut violations = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let ds = pts[j] - pts[i];
            let prod = ds * (vals[j] - vals[i]);
            if prod < 0.0 {
                violations.push((pts[i], pts[j]));
            }
            c1 = c1.min(prod / abs_pow(ds, spec.r + 1.0));
            c1p = c1p.min(prod / (ds * ds));
        }
    }
    let mut c2: f64 = 0.0;
    for &s in &pts {
        let d = spec.prime(s);
        if d < 0.0 {
            violations.push((s, s));
        }
        // the α₃ branch has unbounded Ψ′ at 0; restrict the growth check there
        if spec.alpha3 > 0.0 && s.abs() < 1e-3 {
            continue;
        }
        c2 = c2.max(d / (1.0 + abs_pow(s, spec.r - 1.0)));
    }
    PsiGrowthReport {
        c1_est: c1.max(0.0),
        c1_prime_est: c1p.max(0.0),
        c2_est: c2,
        violations,
        psi_zero: spec.eval(0.0),
        n_samples: n,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub c1_est: f64,
    pub c2_est: f64,
    pub holds: bool,
    pub n_fields: usize,
}

/// Random smooth field in `H_n` with coefficients decaying like `k^{-2}`.
pub(crate) fn random_smooth_field(basis: &Basis, rng: &mut impl Rng, amplitude: f64, max_mode: usize) -> SpectralField {
    let n = basis.n_modes().min(max_mode.max(1));
    let mut c = basis.zeros_spectral();
    for k in 0..n {
        let u: f64 = rng.random_range(-1.0..1.0);
        c.coeffs_mut()[k] = amplitude * u / ((k + 1) as f64).powi(2);
    }
    c
}

/// Sampled check of `𝓔(Ψ(x),x) − ⟨Φ(x),x⟩ ≥ c₁𝓔(x,x) − c₂`.
///
/// Fields are drawn at amplitudes spread over four decades. `c₁` is the
/// smallest ratio `(𝓔(Ψ(x),x) − ⟨Φ(x),x⟩)/𝓔(x,x)` among the largest-amplitude
/// half of the samples (the inequality can only absorb small fields into
/// `c₂`); `c₂` is then the least constant covering every sample. The
/// inequality is reported to hold iff `c₁ > 0`.
pub fn check_coercivity(psi: &PsiSpec, phi: &PhiSpec, basis: &Basis, n_fields: usize, seed: u64) -> CoercivityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fields = n_fields.max(4);
    let mut samples = Vec::with_capacity(n_fields);
    for i in 0..n_fields {
        // log-uniform amplitude ladder in [1e-2, 1e2]
        let amp = 10f64.powf(-2.0 + 4.0 * i as f64 / (n_fields - 1) as f64);
        let max_mode = 1 + (i % basis.n_modes().min(16));
        let x = random_smooth_field(basis, &mut rng, amp, max_mode);
        let g = basis.to_grid(&x).expect("basis-shaped field");
        let psi_hat = basis.to_spectral(&psi.eval_grid(&g)).expect("basis-shaped field");
        let lhs = basis.energy(&psi_hat, &x) - basis.inner_grid(&phi.eval_grid(&g), &g);
        let ex = basis.energy(&x, &x);
        samples.push((amp, lhs, ex));
    }
    let c1 = samples[n_fields / 2..]
        .iter()
        .filter(|(_, _, ex)| *ex > 0.0)
        .map(|(_, lhs, ex)| lhs / ex)
        .fold(f64::INFINITY, f64::min);
    let c1 = if c1.is_finite() { c1 } else { 0.0 };
    let c2 = samples.iter().map(|(_, lhs, ex)| c1 * ex - lhs).fold(0.0, f64::max);
    // round-off level residuals are not a genuine c₂
    let scale = samples.iter().map(|(_, l, e)| l.abs().max(e.abs())).fold(0.0, f64::max);
    let c2 = if c2 <= 1e-12 * scale { 0.0 } else { c2 };
    CoercivityReport { c1_est: c1, c2_est: c2, holds: c1 > 0.0, n_fields }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiBoundsReport {
    pub declared_lipschitz: f64,
    pub declared_k: f64,
    /// Largest `|Φ(a)−Φ(b)|/|a−b|` seen on sampled scalar pairs.
    pub lipschitz_est: f64,
    /// Largest `⟨Φ(x)−Φ(y), 1_{x>y}⟩ / μ((x−y)⁺)` seen on sampled field pairs.
    pub k_est: f64,
    pub holds: bool,
}

/// Samples the Lipschitz bound and the one-sided bound.
pub fn check_phi_bounds(phi: &PhiSpec, basis: &Basis, n_fields: usize, seed: u64) -> PhiBoundsReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l0 = phi.lipschitz();
    let k = phi.one_sided();
    let mut lip: f64 = 0.0;
    for _ in 0..4096 {
        let a: f64 = rng.random_range(-10.0..10.0);
        let b: f64 = rng.random_range(-10.0..10.0);
        if (a - b).abs() > 1e-9 {
            lip = lip.max((phi.eval(a) - phi.eval(b)).abs() / (a - b).abs());
        }
    }
    let mut k_est = f64::NEG_INFINITY;
    for i in 0..n_fields.max(1) {
        let amp = 0.1 + 4.0 * i as f64 / n_fields.max(1) as f64;
        let x = basis.to_grid(&random_smooth_field(basis, &mut rng, amp, 8)).expect("basis-shaped field");
        let y = basis.to_grid(&random_smooth_field(basis, &mut rng, amp, 8)).expect("basis-shaped field");
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in x.values().iter().zip(y.values()) {
            if a > b {
                num += phi.eval(*a) - phi.eval(*b);
                den += a - b;
            }
        }
        if den > 0.0 {
            k_est = k_est.max(num / den);
        }
    }
    let tol = 1e-9 * (1.0 + l0);
    PhiBoundsReport {
        declared_lipschitz: l0,
        declared_k: k,
        lipschitz_est: lip,
        k_est,
        holds: lip <= l0 + tol && k_est <= k + tol,
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn psi_strategy() -> impl Strategy<Value = PsiSpec> {
        (1.0f64..4.0, 0.05f64..0.95, 0.1f64..3.0, 0.0f64..2.0, 0.0f64..2.0)
            .prop_map(|(r, rp, a1, a2, a3)| PsiSpec::new(r, rp, a1, a2, a3).unwrap())
    }

    proptest! {
        #[test]
        fn psi_is_odd(p in psi_strategy(), s in -10.0f64..10.0) {
            prop_assert!((p.eval(-s) + p.eval(s)).abs() <= 1e-12 * (1.0 + p.eval(s).abs()));
        }

        #[test]
        fn psi_is_monotone(p in psi_strategy(), a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assert!((b - a) * (p.eval(b) - p.eval(a)) >= 0.0);
            prop_assert!(p.prime(a) >= 0.0);
        }

        #[test]
        fn penalty_only_acts_on_negative_values(s in 0.0f64..100.0, n in 0.0f64..1e5, slope in -3.0f64..3.0) {
            let phi = PhiSpec::linear(slope);
            prop_assert_eq!(penalized_phi(s, &phi, &PenaltySpec::new(n).unwrap()), phi.eval(s));
        }

        #[test]
        fn penalty_excess_nonincreasing(a in -10.0f64..10.0, b in -10.0f64..10.0, n in 0.0f64..1e4) {
            let phi = PhiSpec::affine(0.3, -0.2);
            let pen = PenaltySpec::new(n).unwrap();
            let ex = |s: f64| penalized_phi(s, &phi, &pen) - phi.eval(s);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(ex(hi) <= ex(lo) + 1e-9);
        }
    }
}
