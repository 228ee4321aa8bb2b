//! Additive diagonal noise `σe_i = q_i e_i` and its summability checks.
//!
//! Increments are drawn from a counter-based generator: the ChaCha key comes
//! from the master seed, the ChaCha stream id is the trajectory id and the
//! word position is derived from the step index. Any `(seed, trajectory,
//! step)` triple maps to the same normals regardless of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{Basis, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("noise amplitudes must be finite and nonnegative (q_{index} = {value})")]
    NegativeAmplitude { index: usize, value: f64 },
    #[error("refinement factor must be >= 1")]
    ZeroRefinement,
}

/// Words reserved per step in a ChaCha stream; far above what a step consumes.
const STEP_WORDS: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Amplitudes {
    /// Explicit `q_1, q_2, …`; modes past the end carry no noise.
    Explicit { q: Vec<f64> },
    /// `q_i = scale · i^{−power}`
    Power { scale: f64, power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amplitudes: Amplitudes,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn power(scale: f64, power: f64, seed: u64) -> Result<Self, NoiseError> {
        let spec = NoiseSpec { amplitudes: Amplitudes::Power { scale, power }, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn explicit(q: Vec<f64>, seed: u64) -> Result<Self, NoiseError> {
        let spec = NoiseSpec { amplitudes: Amplitudes::Explicit { q }, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn silent(seed: u64) -> Self {
        NoiseSpec { amplitudes: Amplitudes::Explicit { q: Vec::new() }, seed }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        match &self.amplitudes {
            Amplitudes::Explicit { q } => {
                for (i, &v) in q.iter().enumerate() {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(NoiseError::NegativeAmplitude { index: i + 1, value: v });
                    }
                }
            }
            Amplitudes::Power { scale, power } => {
                if !(*scale >= 0.0 && scale.is_finite() && power.is_finite()) {
                    return Err(NoiseError::NegativeAmplitude { index: 1, value: *scale });
                }
            }
        }
        Ok(())
    }

    /// `q_i` for 1-based `i`.
    pub fn q(&self, i: usize) -> f64 {
        match &self.amplitudes {
            Amplitudes::Explicit { q } => q.get(i - 1).copied().unwrap_or(0.0),
            Amplitudes::Power { scale, power } => scale * (i as f64).powf(-power),
        }
    }

    /// `q_1..q_n`
    pub fn q_vec(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.q(i)).collect()
    }

    /// `‖σ‖_HS = √(Σ q_i²)` over the first `n` modes.
    pub fn hs_norm(&self, n: usize) -> f64 {
        self.q_vec(n).iter().map(|q| q * q).sum::<f64>().sqrt()
    }

    pub fn is_silent(&self, n: usize) -> bool {
        self.q_vec(n).iter().all(|q| *q == 0.0)
    }
}

/// Keyed source of standard normals for one trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    key: [u8; 32],
    trajectory: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64) -> Self {
        let key = ChaCha8Rng::seed_from_u64(seed).get_seed();
        NoiseStream { key, trajectory }
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }

    /// Fills `out` with the standard normals attached to `step`.
    pub fn normals(&self, step: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.trajectory);
        rng.set_word_pos(step as u128 * STEP_WORDS);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
}

/// A fixed Brownian path sampled at `dt_fine`; coarse steps of size
/// `refine · dt_fine` sum consecutive fine increments.
#[derive(Debug, Clone)]
pub struct NoisePath {
    stream: NoiseStream,
    q: Vec<f64>,
    dt_fine: f64,
    refine: u64,
    silent: bool,
}

impl NoisePath {
    pub fn new(spec: &NoiseSpec, n_modes: usize, trajectory: u64, dt_fine: f64, refine: u64) -> Result<Self, NoiseError> {
        spec.validate()?;
        if !(dt_fine > 0.0) {
            return Err(NoiseError::NonPositiveDt(dt_fine));
        }
        if refine == 0 {
            return Err(NoiseError::ZeroRefinement);
        }
        let q = spec.q_vec(n_modes);
        let silent = q.iter().all(|v| *v == 0.0);
        Ok(NoisePath { stream: NoiseStream::new(spec.seed, trajectory), q, dt_fine, refine, silent })
    }

    /// Same path with coarse steps `factor` times larger.
    pub fn coarsened(&self, factor: u64) -> NoisePath {
        NoisePath { refine: self.refine * factor, ..self.clone() }
    }

    pub fn dt(&self) -> f64 {
        self.dt_fine * self.refine as f64
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn trajectory(&self) -> u64 {
        self.stream.trajectory
    }

    pub fn is_silent(&self) -> bool {
        self.silent
    }

    /// `ΔW` coefficients for coarse step `step` into `out` (`scratch` has the same length).
    pub fn increment_into(&self, step: u64, out: &mut [f64], scratch: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.silent {
            return;
        }
        let sd = self.dt_fine.sqrt();
        for j in 0..self.refine {
            self.stream.normals(step * self.refine + j, scratch);
            for ((o, z), q) in out.iter_mut().zip(scratch.iter()).zip(&self.q) {
                *o += q * sd * z;
            }
        }
    }

    pub fn increment(&self, step: u64) -> SpectralField {
        let mut out = vec![0.0; self.q.len()];
        let mut scratch = vec![0.0; self.q.len()];
        self.increment_into(step, &mut out, &mut scratch);
        SpectralField(out)
    }
}

/// One increment `q_k √dt ξ_k` of the noise.
pub fn sample_increment(dt: f64, spec: &NoiseSpec, n_modes: usize, stream: &NoiseStream, step: u64) -> Result<SpectralField, NoiseError> {
    if !(dt > 0.0) {
        return Err(NoiseError::NonPositiveDt(dt));
    }
    spec.validate()?;
    let mut z = vec![0.0; n_modes];
    stream.normals(step, &mut z);
    let sd = dt.sqrt();
    Ok(SpectralField(z.iter().enumerate().map(|(k, z)| spec.q(k + 1) * sd * z).collect()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub exponent: f64,
    /// `(N, Σ_{i≤N} i^{exponent} q_i²)` at decades of `N`.
    pub partial_sums: Vec<(usize, f64)>,
    /// Fitted `p` in `term_i ~ i^{−p}` over the last decade of terms.
    pub tail_power: f64,
    pub converged: bool,
}

/// `Σ i^{(r²−1)/(2r+4)} q_i² < ∞`, judged from partial sums up to `n_terms`.
///
/// Explicit amplitude vectors are finite, so the series trivially converges;
/// the tail fit is still reported for the supplied entries.
pub fn check_noise_summability(spec: &NoiseSpec, r: f64, n_terms: usize) -> SummabilityReport {
    let exponent = (r * r - 1.0) / (2.0 * r + 4.0);
    let n_terms = match &spec.amplitudes {
        Amplitudes::Explicit { q } => q.len().min(n_terms.max(1)),
        Amplitudes::Power { .. } => n_terms.max(10),
    };
    let term = |i: usize| (i as f64).powf(exponent) * spec.q(i).powi(2);
    let mut partial_sums = Vec::new();
    let mut sum = 0.0;
    let mut next = 1;
    for i in 1..=n_terms {
        sum += term(i);
        if i == next || i == n_terms {
            partial_sums.push((i, sum));
            next *= 10;
        }
    }
    // least squares of log term against log i over the last decade
    let lo = (n_terms / 10).max(1);
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in lo..=n_terms {
        let t = term(i);
        if t > 0.0 {
            let x = (i as f64).ln();
            let y = t.ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            cnt += 1.0;
        }
    }
    let tail_power = if cnt >= 2.0 && (cnt * sxx - sx * sx).abs() > 0.0 {
        -(cnt * sxy - sx * sy) / (cnt * sxx - sx * sx)
    } else {
        f64::INFINITY
    };
    let converged = match &spec.amplitudes {
        Amplitudes::Explicit { .. } => sum.is_finite(),
        // a margin keeps the borderline p = 1 family out
        Amplitudes::Power { .. } => sum.is_finite() && tail_power > 1.01,
    };
    SummabilityReport { exponent, partial_sums, tail_power, converged }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub hs_norm: f64,
    /// `(n, T ∫ (Σ_{i≤n} q_i² e_i²)^{(1+r)/2} dμ)` at doubling truncations.
    pub lp_integral_partial: Vec<(usize, f64)>,
    pub bounded: bool,
}

/// Integrability of the diagonal noise, evaluated by grid quadrature for truncations
/// up to `max_terms`. Boundedness means the last doubling raised the
/// integral by less than 5%.
pub fn check_noise_integrability(spec: &NoiseSpec, r: f64, t_end: f64, max_terms: usize) -> IntegrabilityReport {
    let max_terms = max_terms.max(1);
    let basis = Basis::new(max_terms, 4 * max_terms + 1).expect("valid quadrature basis");
    let q = spec.q_vec(max_terms);
    let hs_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m = basis.n_grid();
    let mut acc = vec![0.0; m];
    let mut out = Vec::new();
    let mut next = 1;
    for i in 1..=max_terms {
        let qi2 = q[i - 1] * q[i - 1];
        if qi2 != 0.0 {
            for (a, e) in acc.iter_mut().zip(basis.mode_row(i)) {
                *a += qi2 * e * e;
            }
        }
        if i == next || i == max_terms {
            let p = (1.0 + r) / 2.0;
            let integral = t_end * basis.h() * acc.iter().map(|a| a.powf(p)).sum::<f64>();
            out.push((i, integral));
            next *= 2;
        }
    }
    let bounded = match out.as_slice() {
        [.., (_, a), (_, b)] => *b <= 1.05 * *a || *b == 0.0,
        _ => true,
    };
    IntegrabilityReport { hs_norm, lp_integral_partial: out, bounded }
}
