//! Plain `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! [basis]        n_modes n_grid spectrum
//! [psi]          r r_prime alpha1 alpha2 alpha3 prime_cap
//! [phi]          kind slope offset amplitude knots values penalty
//! [noise]        master_seed amplitudes scale power q
//! [solver]       dt t_end scheme record_every resolvent_eps stabilization
//!                newton_tol x0 y0 clip_initial
//! [experiment]   name n_paths penalty_levels eps_levels phi_shift markov_s
//!                markov_t burn_in decay_horizon batches tol_*
//! ```
//!
//! Keys that do not apply to the selected `kind`/`amplitudes` are rejected
//! like unknown keys. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::Spectrum;
use crate::harness::{BasisSpec, Experiment, ExperimentParams, ExperimentSpec, Tolerances};
use crate::model::{PenaltySpec, PhiKind, PhiSpec, PsiSpec};
use crate::noise::{Amplitudes, NoiseSpec};
use crate::solver::{InitialCondition, Model, Scheme, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: [{section}] {key}: {msg}")]
    Value { line: usize, section: String, key: String, msg: String },
    #[error("missing required key [{section}] {key}")]
    Missing { section: String, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub const SECTIONS: [&str; 6] = ["basis", "psi", "phi", "noise", "solver", "experiment"];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw document: section → key → value, with source lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDoc {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut doc = ConfigDoc::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, msg: format!("malformed section header `{content}`") })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax { line, msg: format!("unknown section [{name}]") });
                }
                if doc.sections.contains_key(name) {
                    return Err(ConfigError::Syntax { line, msg: format!("duplicate section [{name}]") });
                }
                doc.sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "empty key".into() });
            }
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("key `{key}` outside of any section") })?;
            let map = doc.sections.get_mut(section).expect("section inserted on header");
            if map.contains_key(key) {
                return Err(ConfigError::Syntax { line, msg: format!("duplicate key `{key}`") });
            }
            map.insert(key.to_string(), Entry { value: value.to_string(), line });
        }
        Ok(doc)
    }

    pub fn keys(&self) -> Vec<(String, String)> {
        self.sections
            .iter()
            .flat_map(|(s, m)| m.keys().map(move |k| (s.clone(), k.clone())))
            .collect()
    }

    fn set(&mut self, section: &str, key: &str, value: String) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), Entry { value, line: 0 });
    }

    /// Canonical text: sections in fixed order, keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in SECTIONS {
            if let Some(map) = self.sections.get(s) {
                let _ = writeln!(out, "[{s}]");
                for (k, e) in map {
                    let _ = writeln!(out, "{k} = {}", e.value);
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Typed reader over one section that tracks consumed keys.
struct Reader<'a> {
    name: &'static str,
    map: Option<&'a BTreeMap<String, Entry>>,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(doc: &'a ConfigDoc, name: &'static str) -> Self {
        Reader { name, map: doc.sections.get(name), used: Vec::new() }
    }

    fn err(&self, key: &str, line: usize, msg: impl Into<String>) -> ConfigError {
        ConfigError::Value { line, section: self.name.into(), key: key.into(), msg: msg.into() }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Entry> {
        self.used.push(key);
        self.map.and_then(|m| m.get(key))
    }

    fn opt<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| self.err(key, e.line, format!("`{}`: {err}", e.value))),
        }
    }

    fn get<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&mut self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| ConfigError::Missing { section: self.name.into(), key: key.into() })
    }

    fn list(&mut self, key: &'static str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => {
                if e.value.is_empty() {
                    return Ok(Some(Vec::new()));
                }
                e.value
                    .split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| self.err(key, e.line, format!("bad number `{}`", t.trim()))))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Some)
            }
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.map.and_then(|m| m.get(key)).map(|e| e.line).unwrap_or(0)
    }

    /// Rejects keys present in the section but never read.
    fn finish(self) -> Result<(), ConfigError> {
        if let Some(map) = self.map {
            for (k, e) in map {
                if !self.used.contains(&k.as_str()) {
                    return Err(ConfigError::Value {
                        line: e.line,
                        section: self.name.into(),
                        key: k.clone(),
                        msg: "unknown or inapplicable key".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub basis: BasisSpec,
    pub model: Model,
    pub solver: SolverConfig,
    pub x0: InitialCondition,
    pub y0: Option<InitialCondition>,
    pub clip_initial: bool,
    pub experiment: Option<Experiment>,
    pub n_paths: usize,
    pub params: ExperimentParams,
    pub tol: Tolerances,
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f(*x)).collect::<Vec<_>>().join(",")
}

macro_rules! tolerance_keys {
    ($m:ident) => {
        $m!(pathwise, "tol_pathwise");
        $m!(contraction_ratio, "tol_contraction_ratio");
        $m!(balance, "tol_balance");
        $m!(moment_factor, "tol_moment_factor");
        $m!(slope_lo, "tol_slope_lo");
        $m!(slope_hi, "tol_slope_hi");
        $m!(complementarity, "tol_complementarity");
        $m!(resolvent_final, "tol_resolvent_final");
        $m!(oracle, "tol_oracle");
        $m!(se_factor, "tol_se_factor");
        $m!(ou_rel, "tol_ou_rel");
        $m!(decay_margin, "tol_decay_margin");
        $m!(energy_abs, "tol_energy_abs");
        $m!(cauchy_shrink, "tol_cauchy_shrink");
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_doc(&ConfigDoc::parse(text)?)
    }

    pub fn from_doc(doc: &ConfigDoc) -> Result<Self, ConfigError> {
        if doc.sections.is_empty() {
            return Err(ConfigError::Invalid("empty configuration".into()));
        }
        let mut b = Reader::new(doc, "basis");
        let basis = BasisSpec {
            n_modes: b.req("n_modes")?,
            n_grid: b.req("n_grid")?,
            spectrum: b.get("spectrum", Spectrum::Continuum)?,
        };
        b.finish()?;

        let mut p = Reader::new(doc, "psi");
        let psi = PsiSpec {
            r: p.req("r")?,
            r_prime: p.get("r_prime", 0.5)?,
            alpha1: p.req("alpha1")?,
            alpha2: p.get("alpha2", 0.0)?,
            alpha3: p.get("alpha3", 0.0)?,
            prime_cap: p.get("prime_cap", 1e6)?,
        };
        let psi_line = p.line_of("r");
        p.finish()?;
        psi.validate().map_err(|e| ConfigError::Value { line: psi_line, section: "psi".into(), key: "r".into(), msg: e.to_string() })?;

        let mut f = Reader::new(doc, "phi");
        let kind: String = f.get("kind", "linear".to_string())?;
        let phi_kind = match kind.as_str() {
            "linear" => PhiKind::Linear { slope: f.get("slope", 0.0)?, offset: f.get("offset", 0.0)? },
            "sigmoid" => PhiKind::AffineSigmoid {
                offset: f.get("offset", 0.0)?,
                slope: f.get("slope", 0.0)?,
                amplitude: f.req("amplitude")?,
            },
            "table" => PhiKind::Tabulated {
                knots: f.list("knots")?.ok_or(ConfigError::Missing { section: "phi".into(), key: "knots".into() })?,
                values: f.list("values")?.ok_or(ConfigError::Missing { section: "phi".into(), key: "values".into() })?,
            },
            other => return Err(f.err("kind", f.line_of("kind"), format!("unknown kind `{other}` (linear|sigmoid|table)"))),
        };
        let phi = PhiSpec { kind: phi_kind };
        phi.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let pen_line = f.line_of("penalty");
        let penalty = PenaltySpec::new(f.get("penalty", 0.0)?)
            .map_err(|e| ConfigError::Value { line: pen_line, section: "phi".into(), key: "penalty".into(), msg: e.to_string() })?;
        f.finish()?;

        let mut n = Reader::new(doc, "noise");
        let seed: u64 = n.req("master_seed")?;
        let rule: String = n.get("amplitudes", "power".to_string())?;
        let amplitudes = match rule.as_str() {
            "power" => Amplitudes::Power { scale: n.get("scale", 0.0)?, power: n.get("power", 1.0)? },
            "explicit" => Amplitudes::Explicit { q: n.list("q")?.unwrap_or_default() },
            other => return Err(n.err("amplitudes", n.line_of("amplitudes"), format!("unknown rule `{other}` (power|explicit)"))),
        };
        let noise = NoiseSpec { amplitudes, seed };
        noise.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        n.finish()?;

        let mut s = Reader::new(doc, "solver");
        let defaults = SolverConfig::default();
        let scheme_line = s.line_of("scheme");
        let scheme = match s.opt::<String>("scheme")? {
            None => defaults.scheme,
            Some(v) => v
                .parse::<Scheme>()
                .map_err(|e| ConfigError::Value { line: scheme_line, section: "solver".into(), key: "scheme".into(), msg: e.to_string() })?,
        };
        let solver = SolverConfig {
            dt: s.req("dt")?,
            t_end: s.req("t_end")?,
            scheme,
            record_every: s.get("record_every", defaults.record_every)?,
            resolvent_eps: s.get("resolvent_eps", 0.0)?,
            stabilization: s.get("stabilization", 0.0)?,
            newton_tol: s.get("newton_tol", defaults.newton_tol)?,
        };
        solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let x0 = s.get("x0", InitialCondition::Zero)?;
        let y0 = s.opt::<InitialCondition>("y0")?;
        let clip_initial = s.get("clip_initial", false)?;
        s.finish()?;

        let mut e = Reader::new(doc, "experiment");
        let pd = ExperimentParams::default();
        let name_line = e.line_of("name");
        let experiment = match e.opt::<String>("name")? {
            None => None,
            Some(v) => Some(v.parse::<Experiment>().map_err(|msg| ConfigError::Value {
                line: name_line,
                section: "experiment".into(),
                key: "name".into(),
                msg,
            })?),
        };
        let n_paths = e.get("n_paths", 50usize)?;
        let params = ExperimentParams {
            penalty_levels: e.list("penalty_levels")?.unwrap_or(pd.penalty_levels),
            eps_levels: e.list("eps_levels")?.unwrap_or(pd.eps_levels),
            phi_shift: e.get("phi_shift", pd.phi_shift)?,
            markov_s: e.get("markov_s", pd.markov_s)?,
            markov_t: e.get("markov_t", pd.markov_t)?,
            burn_in: e.get("burn_in", pd.burn_in)?,
            decay_horizon: e.get("decay_horizon", pd.decay_horizon)?,
            batches: e.get("batches", pd.batches)?,
        };
        let mut tol = Tolerances::default();
        macro_rules! read_tol {
            ($field:ident, $key:literal) => {
                tol.$field = e.get($key, tol.$field)?;
            };
        }
        tolerance_keys!(read_tol);
        e.finish()?;
        if n_paths == 0 {
            return Err(ConfigError::Invalid("n_paths must be >= 1".into()));
        }

        Ok(RunConfig {
            basis,
            model: Model { psi, phi, penalty, noise },
            solver,
            x0,
            y0,
            clip_initial,
            experiment,
            n_paths,
            params,
            tol,
        })
    }

    pub fn to_doc(&self) -> ConfigDoc {
        let mut d = ConfigDoc::default();
        d.set("basis", "n_modes", self.basis.n_modes.to_string());
        d.set("basis", "n_grid", self.basis.n_grid.to_string());
        d.set("basis", "spectrum", self.basis.spectrum.to_string());

        let psi = &self.model.psi;
        d.set("psi", "r", fmt_f(psi.r));
        d.set("psi", "r_prime", fmt_f(psi.r_prime));
        d.set("psi", "alpha1", fmt_f(psi.alpha1));
        d.set("psi", "alpha2", fmt_f(psi.alpha2));
        d.set("psi", "alpha3", fmt_f(psi.alpha3));
        d.set("psi", "prime_cap", fmt_f(psi.prime_cap));

        match &self.model.phi.kind {
            PhiKind::Linear { slope, offset } => {
                d.set("phi", "kind", "linear".into());
                d.set("phi", "slope", fmt_f(*slope));
                d.set("phi", "offset", fmt_f(*offset));
            }
            PhiKind::AffineSigmoid { offset, slope, amplitude } => {
                d.set("phi", "kind", "sigmoid".into());
                d.set("phi", "slope", fmt_f(*slope));
                d.set("phi", "offset", fmt_f(*offset));
                d.set("phi", "amplitude", fmt_f(*amplitude));
            }
            PhiKind::Tabulated { knots, values } => {
                d.set("phi", "kind", "table".into());
                d.set("phi", "knots", fmt_list(knots));
                d.set("phi", "values", fmt_list(values));
            }
        }
        d.set("phi", "penalty", fmt_f(self.model.penalty.n));

        let noise = &self.model.noise;
        d.set("noise", "master_seed", noise.seed.to_string());
        match &noise.amplitudes {
            Amplitudes::Power { scale, power } => {
                d.set("noise", "amplitudes", "power".into());
                d.set("noise", "scale", fmt_f(*scale));
                d.set("noise", "power", fmt_f(*power));
            }
            Amplitudes::Explicit { q } => {
                d.set("noise", "amplitudes", "explicit".into());
                d.set("noise", "q", fmt_list(q));
            }
        }

        let s = &self.solver;
        d.set("solver", "dt", fmt_f(s.dt));
        d.set("solver", "t_end", fmt_f(s.t_end));
        d.set("solver", "scheme", s.scheme.to_string());
        d.set("solver", "record_every", s.record_every.to_string());
        d.set("solver", "resolvent_eps", fmt_f(s.resolvent_eps));
        d.set("solver", "stabilization", fmt_f(s.stabilization));
        d.set("solver", "newton_tol", fmt_f(s.newton_tol));
        d.set("solver", "x0", self.x0.to_string());
        if let Some(y0) = &self.y0 {
            d.set("solver", "y0", y0.to_string());
        }
        d.set("solver", "clip_initial", self.clip_initial.to_string());

        if let Some(e) = self.experiment {
            d.set("experiment", "name", e.to_string());
        }
        d.set("experiment", "n_paths", self.n_paths.to_string());
        let p = &self.params;
        d.set("experiment", "penalty_levels", fmt_list(&p.penalty_levels));
        d.set("experiment", "eps_levels", fmt_list(&p.eps_levels));
        d.set("experiment", "phi_shift", fmt_f(p.phi_shift));
        d.set("experiment", "markov_s", fmt_f(p.markov_s));
        d.set("experiment", "markov_t", fmt_f(p.markov_t));
        d.set("experiment", "burn_in", fmt_f(p.burn_in));
        d.set("experiment", "decay_horizon", fmt_f(p.decay_horizon));
        d.set("experiment", "batches", p.batches.to_string());
        macro_rules! write_tol {
            ($field:ident, $key:literal) => {
                d.set("experiment", $key, fmt_f(self.tol.$field));
            };
        }
        tolerance_keys!(write_tol);
        d
    }

    pub fn to_text(&self) -> String {
        self.to_doc().to_text()
    }

    /// SHA-256 of the canonical serialization, lowercase hex.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn seed(&self) -> u64 {
        self.model.noise.seed
    }

    pub fn experiment_spec(&self, experiment: Experiment) -> ExperimentSpec {
        ExperimentSpec {
            experiment,
            n_paths: self.n_paths,
            basis: self.basis,
            model: self.model.clone(),
            solver: self.solver.clone(),
            x0: self.x0.clone(),
            y0: self.y0.clone(),
            clip_initial: self.clip_initial,
            params: self.params.clone(),
            tol: self.tol.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[basis]
n_modes = 8
n_grid = 17
[psi]
r = 3
alpha1 = 1
[noise]
master_seed = 9
[solver]
dt = 1e-3
t_end = 0.1
";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.basis.n_modes, 8);
        assert_eq!(c.model.phi, PhiSpec::zero());
        assert_eq!(c.seed(), 9);
        assert_eq!(c.solver.scheme, Scheme::ImexPenalty);
        assert_eq!(c.experiment, None);
    }

    #[test]
    fn round_trip_is_identity() {
        let text = format!(
            "{MINIMAL}[experiment]\nname = ergodic\nn_paths = 3\ntol_ou_rel = 0.2\n[phi]\nkind = table\nknots = -1,0,2\nvalues = 1,0,-2\npenalty = 1e3\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_doc().keys(), again.to_doc().keys());
        assert_eq!(c.hash(), again.hash());
    }

    #[test]
    fn comments_and_whitespace_do_not_change_hash() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let b = RunConfig::parse(&MINIMAL.replace("n_grid = 17", "  n_grid=17   # nodes")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = RunConfig::parse(&MINIMAL.replace("alpha1 = 1", "alpha1 = 1\nbeta = 2")).unwrap_err();
        match err {
            ConfigError::Value { line, key, .. } => {
                assert_eq!(key, "beta");
                assert_eq!(line, 8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inapplicable_key_is_rejected() {
        let text = MINIMAL.replace("master_seed = 9", "master_seed = 9\nq = 1,2");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn missing_seed_is_an_error() {
        let err = RunConfig::parse(&MINIMAL.replace("master_seed = 9", "")).unwrap_err();
        assert_eq!(err, ConfigError::Missing { section: "noise".into(), key: "master_seed".into() });
    }

    #[test]
    fn empty_config_is_an_error() {
        assert!(RunConfig::parse("").is_err());
        assert!(RunConfig::parse("# nothing\n").is_err());
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = ConfigDoc::parse("[basis]\nn_modes 8\n").unwrap_err();
        assert_eq!(err, ConfigError::Syntax { line: 2, msg: "expected `key = value`, got `n_modes 8`".into() });
        assert!(matches!(ConfigDoc::parse("[bogus]\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ConfigDoc::parse("x = 1\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ConfigDoc::parse("[psi]\nr=1\nr=2\n"), Err(ConfigError::Syntax { line: 3, .. })));
    }

    #[test]
    fn bad_values_are_reported() {
        let err = RunConfig::parse(&MINIMAL.replace("dt = 1e-3", "dt = fast")).unwrap_err();
        assert!(matches!(err, ConfigError::Value { line: 11, .. }), "{err:?}");
        assert!(RunConfig::parse(&MINIMAL.replace("r = 3", "r = 0.5")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("t_end = 0.1", "t_end = 0.10005")).is_err());
    }
}
