//! Sine eigenbasis of the Dirichlet Laplacian on (0,1).
//!
//! Fields live either as coefficients in `{e_k}` ([`SpectralField`]) or as
//! point values on the uniform interior grid `x_j = j/(M+1)` ([`GridField`]).
//! Quadrature is the rectangle rule with weight `h = 1/(M+1)` and implicit
//! zero boundary values. With this weight the sampled eigenfunctions are
//! exactly orthonormal for every `k, l <= M`, so analysis and synthesis are an
//! exact inverse pair whenever `n_modes <= n_grid`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("mode index {k} out of range 1..={n_modes}")]
    IndexOutOfRange { k: usize, n_modes: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("resolvent parameter must be nonnegative, got {0}")]
    NegativeEpsilon(f64),
    #[error("invalid basis size: n_modes={n_modes}, n_grid={n_grid} (need 1 <= n_modes <= n_grid)")]
    InvalidSize { n_modes: usize, n_grid: usize },
    #[error("unknown norm `{0}`")]
    UnknownNorm(String),
    #[error("unknown spectrum `{0}` (expected continuum or lattice)")]
    UnknownSpectrum(String),
    #[error("H1/H-1 norms need {0}")]
    NeedsSpectral(&'static str),
}

/// Which eigenvalues accompany the sine eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spectrum {
    /// `λ_k = (kπ)²`, the Dirichlet Laplacian on the continuum interval.
    #[default]
    Continuum,
    /// `λ_k = 4(M+1)² sin²(kπ/(2(M+1)))`, the exact eigenvalues of the
    /// three-point Dirichlet Laplacian on the grid. This operator is
    /// Markovian (its resolvent is entrywise positive), so the grid system is
    /// itself a finite Dirichlet space.
    Lattice,
}

impl fmt::Display for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Spectrum::Continuum => write!(f, "continuum"),
            Spectrum::Lattice => write!(f, "lattice"),
        }
    }
}

impl FromStr for Spectrum {
    type Err = BasisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuum" => Ok(Spectrum::Continuum),
            "lattice" => Ok(Spectrum::Lattice),
            other => Err(BasisError::UnknownSpectrum(other.to_string())),
        }
    }
}

/// Coefficients of a field in the eigenbasis; index `i` holds mode `k = i+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField(pub Vec<f64>);

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        SpectralField(vec![0.0; n])
    }

    /// Single mode `amplitude * e_k` (1-based `k`).
    pub fn mode(n: usize, k: usize, amplitude: f64) -> Self {
        let mut c = vec![0.0; n];
        if (1..=n).contains(&k) {
            c[k - 1] = amplitude;
        }
        SpectralField(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += a * o;
        }
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        SpectralField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn dot(&self, other: &SpectralField) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Point values at the interior grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField(pub Vec<f64>);

impl GridField {
    pub fn zeros(m: usize) -> Self {
        GridField(vec![0.0; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn negative_part(&self) -> GridField {
        self.map(|v| (-v).max(0.0))
    }

    pub fn sub(&self, other: &GridField) -> GridField {
        GridField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Norm selector for [`Basis::norm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    /// `L^p` with the given exponent (typically `1 + r`).
    Lp(f64),
    H1,
    Hm1,
}

impl FromStr for Norm {
    type Err = BasisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L1" | "l1" => Ok(Norm::L1),
            "L2" | "l2" => Ok(Norm::L2),
            "H1" | "h1" => Ok(Norm::H1),
            "Hm1" | "hm1" | "H-1" => Ok(Norm::Hm1),
            other => {
                let p = other
                    .strip_prefix('L')
                    .or_else(|| other.strip_prefix('l'))
                    .and_then(|p| p.parse::<f64>().ok())
                    .filter(|p| *p >= 1.0);
                p.map(Norm::Lp).ok_or_else(|| BasisError::UnknownNorm(other.to_string()))
            }
        }
    }
}

/// Either representation, for norm evaluation.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Spectral(&'a SpectralField),
    Grid(&'a GridField),
}

impl<'a> From<&'a SpectralField> for FieldRef<'a> {
    fn from(f: &'a SpectralField) -> Self {
        FieldRef::Spectral(f)
    }
}

impl<'a> From<&'a GridField> for FieldRef<'a> {
    fn from(f: &'a GridField) -> Self {
        FieldRef::Grid(f)
    }
}

/// Eigenpairs on a fixed grid. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Basis {
    n_modes: usize,
    n_grid: usize,
    spectrum: Spectrum,
    h: f64,
    eigenvalues: Vec<f64>,
    /// `sine[(k-1) * n_grid + j] = √2 sin(kπ x_{j+1})`
    sine: Vec<f64>,
}

impl Basis {
    pub const DEFAULT_MODES: usize = 32;
    pub const DEFAULT_GRID: usize = 129;

    /// Continuum spectrum with `n_modes` modes on `n_grid` interior nodes.
    pub fn new(n_modes: usize, n_grid: usize) -> Result<Self, BasisError> {
        Self::with_spectrum(n_modes, n_grid, Spectrum::Continuum)
    }

    /// Lattice spectrum with one mode per node.
    pub fn lattice(n: usize) -> Result<Self, BasisError> {
        Self::with_spectrum(n, n, Spectrum::Lattice)
    }

    pub fn with_spectrum(n_modes: usize, n_grid: usize, spectrum: Spectrum) -> Result<Self, BasisError> {
        if n_modes == 0 || n_grid < n_modes {
            return Err(BasisError::InvalidSize { n_modes, n_grid });
        }
        let h = 1.0 / (n_grid as f64 + 1.0);
        let eigenvalues = (1..=n_modes)
            .map(|k| match spectrum {
                Spectrum::Continuum => (k as f64 * PI).powi(2),
                Spectrum::Lattice => {
                    let s = (k as f64 * PI * h / 2.0).sin();
                    4.0 * s * s / (h * h)
                }
            })
            .collect();
        let mut sine = Vec::with_capacity(n_modes * n_grid);
        for k in 1..=n_modes {
            for j in 1..=n_grid {
                // Reduce the argument mod 2(M+1) for a symmetric table.
                let idx = (k * j) % (2 * (n_grid + 1));
                sine.push(SQRT_2 * (PI * idx as f64 * h).sin());
            }
        }
        Ok(Basis { n_modes, n_grid, spectrum, h, eigenvalues, sine })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn spectrum(&self) -> Spectrum {
        self.spectrum
    }

    /// Grid spacing and quadrature weight.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest eigenvalue `λ_1`.
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Largest retained eigenvalue `λ_N`.
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.n_modes - 1]
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n_grid).map(move |j| j as f64 * self.h)
    }

    /// Grid samples of `e_k` (1-based `k`).
    pub fn mode_row(&self, k: usize) -> &[f64] {
        &self.sine[(k - 1) * self.n_grid..k * self.n_grid]
    }

    /// `(λ_k, e_k(x_j))` for 1-based `k`.
    pub fn eigenpair(&self, k: usize) -> Result<(f64, GridField), BasisError> {
        if !(1..=self.n_modes).contains(&k) {
            return Err(BasisError::IndexOutOfRange { k, n_modes: self.n_modes });
        }
        Ok((self.eigenvalues[k - 1], GridField(self.mode_row(k).to_vec())))
    }

    pub fn zeros_spectral(&self) -> SpectralField {
        SpectralField::zeros(self.n_modes)
    }

    pub fn zeros_grid(&self) -> GridField {
        GridField::zeros(self.n_grid)
    }

    /// Samples a function of `x` on the grid.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField(self.nodes().map(f).collect())
    }

    fn check_grid(&self, f: &GridField) -> Result<(), BasisError> {
        if f.len() != self.n_grid {
            return Err(BasisError::DimensionMismatch { expected: self.n_grid, got: f.len() });
        }
        Ok(())
    }

    fn check_spectral(&self, c: &SpectralField) -> Result<(), BasisError> {
        if c.len() != self.n_modes {
            return Err(BasisError::DimensionMismatch { expected: self.n_modes, got: c.len() });
        }
        Ok(())
    }

    /// Orthogonal projection onto `H_n`: `c_k = h Σ_j f(x_j) e_k(x_j)`.
    pub fn to_spectral(&self, f: &GridField) -> Result<SpectralField, BasisError> {
        self.check_grid(f)?;
        let mut out = vec![0.0; self.n_modes];
        self.to_spectral_into(f.values(), &mut out);
        Ok(SpectralField(out))
    }

    /// Unchecked analysis into a caller buffer (hot path of the solver).
    pub(crate) fn to_spectral_into(&self, f: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.sine[k * self.n_grid..(k + 1) * self.n_grid];
            let s: f64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
            *o = self.h * s;
        }
    }

    /// Synthesis `f(x_j) = Σ_k c_k e_k(x_j)`.
    pub fn to_grid(&self, c: &SpectralField) -> Result<GridField, BasisError> {
        self.check_spectral(c)?;
        let mut out = vec![0.0; self.n_grid];
        self.to_grid_into(c.coeffs(), &mut out);
        Ok(GridField(out))
    }

    pub(crate) fn to_grid_into(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &ck) in c.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            let row = &self.sine[k * self.n_grid..(k + 1) * self.n_grid];
            for (o, e) in out.iter_mut().zip(row) {
                *o += ck * e;
            }
        }
    }

    /// Quadrature `∫ f g dμ`.
    pub fn inner_grid(&self, f: &GridField, g: &GridField) -> f64 {
        self.h * f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Quadrature `∫ f dμ`.
    pub fn integral(&self, f: &GridField) -> f64 {
        self.h * f.values().iter().sum::<f64>()
    }

    /// Dirichlet form `𝓔(u, v) = Σ λ_k u_k v_k`.
    pub fn energy(&self, u: &SpectralField, v: &SpectralField) -> f64 {
        self.eigenvalues.iter().zip(u.coeffs().iter().zip(v.coeffs())).map(|(l, (a, b))| l * a * b).sum()
    }

    pub fn norm<'a>(&self, field: impl Into<FieldRef<'a>>, norm: Norm) -> Result<f64, BasisError> {
        match field.into() {
            FieldRef::Spectral(c) => {
                self.check_spectral(c)?;
                match norm {
                    Norm::L2 => Ok(c.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt()),
                    Norm::H1 => Ok(self.energy(c, c).sqrt()),
                    Norm::Hm1 => Ok(self
                        .eigenvalues
                        .iter()
                        .zip(c.coeffs())
                        .map(|(l, v)| v * v / l)
                        .sum::<f64>()
                        .sqrt()),
                    Norm::L1 | Norm::Lp(_) => self.norm(&self.to_grid(c)?, norm),
                }
            }
            FieldRef::Grid(f) => {
                self.check_grid(f)?;
                match norm {
                    Norm::L1 => Ok(self.h * f.values().iter().map(|v| v.abs()).sum::<f64>()),
                    Norm::L2 => Ok(self.inner_grid(f, f).sqrt()),
                    Norm::Lp(p) => Ok(lp_power(self.h, f.values(), p).powf(1.0 / p)),
                    Norm::H1 | Norm::Hm1 => self.norm(&self.to_spectral(f)?, norm),
                }
            }
        }
    }

    /// `(Lc)_k = −λ_k c_k`.
    pub fn apply_l(&self, c: &SpectralField) -> Result<SpectralField, BasisError> {
        self.check_spectral(c)?;
        Ok(SpectralField(self.eigenvalues.iter().zip(c.coeffs()).map(|(l, v)| -l * v).collect()))
    }

    /// `((1 − εL)^{-1} c)_k = c_k / (1 + ελ_k)`.
    pub fn apply_resolvent(&self, c: &SpectralField, eps: f64) -> Result<SpectralField, BasisError> {
        self.check_spectral(c)?;
        if !(eps >= 0.0) {
            return Err(BasisError::NegativeEpsilon(eps));
        }
        Ok(SpectralField(
            self.eigenvalues.iter().zip(c.coeffs()).map(|(l, v)| v / (1.0 + eps * l)).collect(),
        ))
    }
}

/// `h Σ |f_j|^p`, with the common integer exponents unrolled.
pub(crate) fn lp_power(h: f64, f: &[f64], p: f64) -> f64 {
    let s: f64 = if p == 2.0 {
        f.iter().map(|v| v * v).sum()
    } else if p == 4.0 {
        f.iter().map(|v| (v * v) * (v * v)).sum()
    } else if p == 1.0 {
        f.iter().map(|v| v.abs()).sum()
    } else {
        f.iter().map(|v| v.abs().powf(p)).sum()
    };
    h * s
}
