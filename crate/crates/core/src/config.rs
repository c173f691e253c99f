//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::picard::Quadrature;
use crate::report::format_f64;
use crate::spde::{Dynamics, Observable, SpdeConfig};
use crate::spectral::{NoiseIntensity, SpectralField};

/// The CLI subcommands; each one produces a [`crate::report::SuiteReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SuiteKind {
    Simulate,
    Ensemble,
    Picard,
    VerifySubordinator,
    VerifyConvolution,
    VerifyPicard,
    GradientCheck,
    Ergodicity,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 8] = [
        SuiteKind::Simulate,
        SuiteKind::Ensemble,
        SuiteKind::Picard,
        SuiteKind::VerifySubordinator,
        SuiteKind::VerifyConvolution,
        SuiteKind::VerifyPicard,
        SuiteKind::GradientCheck,
        SuiteKind::Ergodicity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Simulate => "simulate",
            SuiteKind::Ensemble => "ensemble",
            SuiteKind::Picard => "picard",
            SuiteKind::VerifySubordinator => "verify-subordinator",
            SuiteKind::VerifyConvolution => "verify-convolution",
            SuiteKind::VerifyPicard => "verify-picard",
            SuiteKind::GradientCheck => "gradient-check",
            SuiteKind::Ergodicity => "ergodicity",
        }
    }
}

impl FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite {s:?}")))
    }
}

/// Sample sizes used by the verification suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// The sizes of the acceptance battery.
    #[default]
    Full,
    /// Roughly a hundredth of the work, for smoke runs.
    Quick,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Quick => "quick",
        }
    }

    /// `full` in the full profile, otherwise `quick`.
    pub fn pick<T>(self, full: T, quick: T) -> T {
        match self {
            Profile::Full => full,
            Profile::Quick => quick,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub alpha: f64,
    pub theta: f64,
    pub theta_prime: f64,
    pub delta: f64,
    /// `β_k = beta_scale · k^{-θ}`.
    pub beta_scale: f64,
    pub n_modes: usize,
    pub dt: f64,
    pub t_end: f64,
    /// `None` runs the full nonlinearity.
    pub r_truncation: Option<f64>,
    pub seed: u64,
    pub ensemble_size: usize,
    pub observables: Vec<Observable>,
    pub output_path: PathBuf,
    /// Initial condition as `(k, cos amplitude, sin amplitude)` in physical
    /// units: `(1, 0, 5)` is `5 sin(x)`.
    pub phi: Vec<(usize, f64, f64)>,
    /// Second initial condition for two-point suites.
    pub phi2: Vec<(usize, f64, f64)>,
    pub record_every: usize,
    pub profile: Profile,
    pub quadrature: Quadrature,
    /// Courant threshold for drift sub-stepping; `None` disables it.
    pub max_courant: Option<f64>,
    /// Largest tolerated fraction of non-finite trajectories.
    pub censor_budget: f64,
    /// Suite the file is meant for; enables its parameter constraints.
    pub suite: Option<SuiteKind>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            theta: 1.75,
            theta_prime: 1.75,
            delta: 1.0,
            beta_scale: 1.0,
            n_modes: 8,
            dt: 1e-3,
            t_end: 1.0,
            r_truncation: None,
            seed: 0,
            ensemble_size: 1000,
            observables: vec![
                Observable::Cos(1),
                Observable::Sin(1),
                Observable::Cos(2),
                Observable::Sin(2),
                Observable::Norm { gamma: 0.0, scale: 10.0 },
            ],
            output_path: PathBuf::from("levy-burgers-out"),
            phi: Vec::new(),
            phi2: vec![(1, 0.0, 5.0)],
            record_every: 10,
            profile: Profile::Full,
            quadrature: Quadrature::default(),
            max_courant: Some(0.5),
            censor_budget: 0.05,
            suite: None,
        }
    }
}

const KEYS: &[&str] = &[
    "alpha",
    "theta",
    "theta_prime",
    "delta",
    "beta_scale",
    "n_modes",
    "dt",
    "t_end",
    "r_truncation",
    "seed",
    "ensemble_size",
    "observables",
    "output_path",
    "phi",
    "phi2",
    "record_every",
    "profile",
    "quadrature",
    "max_courant",
    "censor_budget",
    "suite",
];

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| config_err(line, format!("{key}: cannot parse {v:?}")))
}

/// `"sin1:5 cos2:-0.3"` → `[(1, 0, 5), (2, -0.3, 0)]`; `"0"` or `"zero"`
/// is the zero field.
pub fn parse_trig(text: &str) -> Result<Vec<(usize, f64, f64)>> {
    let text = text.trim();
    if text.is_empty() || text == "0" || text == "zero" {
        return Ok(Vec::new());
    }
    let mut terms = Vec::new();
    for tok in text.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
        let bad = || Error::InvalidParameter(format!("bad trigonometric term {tok:?}"));
        let (head, amp) = tok.split_once(':').ok_or_else(bad)?;
        let amp: f64 = amp.parse().map_err(|_| bad())?;
        let (is_cos, k) = if let Some(k) = head.strip_prefix("cos") {
            (true, k)
        } else if let Some(k) = head.strip_prefix("sin") {
            (false, k)
        } else {
            return Err(bad());
        };
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 || !amp.is_finite() {
            return Err(bad());
        }
        terms.push(if is_cos { (k, amp, 0.0) } else { (k, 0.0, amp) });
    }
    Ok(terms)
}

fn render_trig(terms: &[(usize, f64, f64)]) -> String {
    if terms.is_empty() {
        return "zero".into();
    }
    let mut parts = Vec::new();
    for &(k, a, b) in terms {
        if a != 0.0 {
            parts.push(format!("cos{k}:{}", format_f64(a)));
        }
        if b != 0.0 {
            parts.push(format!("sin{k}:{}", format_f64(b)));
        }
    }
    parts.join(" ")
}

/// Parses and validates a configuration file. Every key is optional;
/// unknown or repeated keys are errors.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    let mut theta_prime_set = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, format!("expected `key = value`, got {content:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(config_err(line, format!("unknown key {key:?}")));
        };
        if seen.contains(&known) {
            return Err(config_err(line, format!("duplicate key {key:?}")));
        }
        seen.push(known);
        match known {
            "alpha" => cfg.alpha = num(line, key, value)?,
            "theta" => cfg.theta = num(line, key, value)?,
            "theta_prime" => {
                cfg.theta_prime = num(line, key, value)?;
                theta_prime_set = true;
            }
            "delta" => cfg.delta = num(line, key, value)?,
            "beta_scale" => cfg.beta_scale = num(line, key, value)?,
            "n_modes" => cfg.n_modes = num(line, key, value)?,
            "dt" => cfg.dt = num(line, key, value)?,
            "t_end" => cfg.t_end = num(line, key, value)?,
            "r_truncation" => {
                cfg.r_truncation = if value == "none" { None } else { Some(num(line, key, value)?) }
            }
            "seed" => cfg.seed = num(line, key, value)?,
            "ensemble_size" => cfg.ensemble_size = num(line, key, value)?,
            "observables" => {
                cfg.observables = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(Observable::parse)
                    .collect::<Result<_>>()
                    .map_err(|e| config_err(line, e.to_string()))?
            }
            "output_path" => cfg.output_path = PathBuf::from(value),
            "phi" => cfg.phi = parse_trig(value).map_err(|e| config_err(line, e.to_string()))?,
            "phi2" => cfg.phi2 = parse_trig(value).map_err(|e| config_err(line, e.to_string()))?,
            "record_every" => cfg.record_every = num(line, key, value)?,
            "profile" => {
                cfg.profile = match value {
                    "full" => Profile::Full,
                    "quick" => Profile::Quick,
                    _ => return Err(config_err(line, format!("profile must be full or quick, got {value:?}"))),
                }
            }
            "quadrature" => {
                cfg.quadrature = match value {
                    "trapezoid" => Quadrature::ExponentialTrapezoid,
                    "euler" => Quadrature::ExponentialEuler,
                    _ => return Err(config_err(line, format!("quadrature must be trapezoid or euler, got {value:?}"))),
                }
            }
            "max_courant" => {
                cfg.max_courant = if value == "none" { None } else { Some(num(line, key, value)?) }
            }
            "censor_budget" => cfg.censor_budget = num(line, key, value)?,
            "suite" => cfg.suite = Some(value.parse().map_err(|e: Error| config_err(line, e.to_string()))?),
            _ => unreachable!("key list and match arms agree"),
        }
    }
    if !theta_prime_set {
        cfg.theta_prime = cfg.theta;
    }
    cfg.validate()?;
    if let Some(s) = cfg.suite {
        cfg.validate_for(s)?;
    }
    Ok(cfg)
}

impl SimConfig {
    /// Range checks that apply to every suite.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return fail(format!("alpha must lie in (1, 2), got {}", self.alpha));
        }
        if !(self.theta_prime >= 0.0 && self.theta >= self.theta_prime) {
            return fail(format!(
                "need theta >= theta_prime >= 0, got theta = {}, theta_prime = {}",
                self.theta, self.theta_prime
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return fail(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if !(self.beta_scale >= self.delta && self.beta_scale <= 1.0 / self.delta) {
            return fail(format!(
                "beta_scale must lie in [delta, 1/delta] = [{}, {}] so that delta k^-theta <= beta_k <= k^-theta_prime / delta, got {}",
                self.delta,
                1.0 / self.delta,
                self.beta_scale
            ));
        }
        if self.n_modes == 0 {
            return fail("n_modes must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.dt <= self.t_end) {
            return fail(format!("need 0 < dt <= t_end, got dt = {}, t_end = {}", self.dt, self.t_end));
        }
        if let Some(r) = self.r_truncation {
            if !(r > 0.0) {
                return fail(format!("r_truncation must be positive or none, got {r}"));
            }
        }
        if self.ensemble_size == 0 || self.record_every == 0 {
            return fail("ensemble_size and record_every must be at least 1".into());
        }
        if let Some(c) = self.max_courant {
            if !(c > 0.0) {
                return fail(format!("max_courant must be positive or none, got {c}"));
            }
        }
        if !(0.0..=1.0).contains(&self.censor_budget) {
            return fail(format!("censor_budget must lie in [0, 1], got {}", self.censor_budget));
        }
        for &(k, _, _) in self.phi.iter().chain(&self.phi2) {
            if k > self.n_modes {
                return fail(format!("initial condition uses wavenumber {k} > n_modes = {}", self.n_modes));
            }
        }
        Ok(())
    }

    /// Extra constraints of a particular suite.
    pub fn validate_for(&self, suite: SuiteKind) -> Result<()> {
        if suite == SuiteKind::Ergodicity {
            if !(self.theta_prime > 1.5) {
                return Err(Error::InvalidParameter(format!(
                    "theta_prime must exceed 3/2 for the ergodicity suite (3/2 < theta_prime <= theta < 2), got {}",
                    self.theta_prime
                )));
            }
            if !(self.theta < 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "theta must be below 2 for the ergodicity suite (3/2 < theta_prime <= theta < 2), got {}",
                    self.theta
                )));
            }
        }
        Ok(())
    }

    pub fn intensity(&self) -> Result<NoiseIntensity> {
        self.intensity_with_modes(self.n_modes)
    }

    pub fn intensity_with_modes(&self, n: usize) -> Result<NoiseIntensity> {
        let beta = (1..=n).map(|k| self.beta_scale * (k as f64).powf(-self.theta)).collect();
        NoiseIntensity::new(self.theta, self.theta_prime, self.delta, beta)
    }

    pub fn dynamics(&self) -> Dynamics {
        match self.r_truncation {
            Some(r) => Dynamics::Truncated { r },
            None => Dynamics::Full,
        }
    }

    pub fn phi_field(&self) -> SpectralField {
        SpectralField::from_trig(self.n_modes, &self.phi)
    }

    pub fn phi2_field(&self) -> SpectralField {
        SpectralField::from_trig(self.n_modes, &self.phi2)
    }

    /// Ensemble description from the flat fields.
    pub fn spde_config(&self) -> Result<SpdeConfig> {
        let mut c = SpdeConfig::new(self.alpha, self.intensity()?, self.dt, self.t_end);
        c.dynamics = self.dynamics();
        c.seed = self.seed;
        c.paths = self.ensemble_size;
        c.record_every = self.record_every;
        c.max_courant = self.max_courant;
        Ok(c)
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), format_f64);
        let _ = writeln!(s, "alpha = {}", format_f64(self.alpha));
        let _ = writeln!(s, "theta = {}", format_f64(self.theta));
        let _ = writeln!(s, "theta_prime = {}", format_f64(self.theta_prime));
        let _ = writeln!(s, "delta = {}", format_f64(self.delta));
        let _ = writeln!(s, "beta_scale = {}", format_f64(self.beta_scale));
        let _ = writeln!(s, "n_modes = {}", self.n_modes);
        let _ = writeln!(s, "dt = {}", format_f64(self.dt));
        let _ = writeln!(s, "t_end = {}", format_f64(self.t_end));
        let _ = writeln!(s, "r_truncation = {}", opt(self.r_truncation));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ensemble_size = {}", self.ensemble_size);
        let obs: Vec<String> = self.observables.iter().map(|o| o.label()).collect();
        let _ = writeln!(s, "observables = {}", obs.join(", "));
        let _ = writeln!(s, "output_path = {}", self.output_path.display());
        let _ = writeln!(s, "phi = {}", render_trig(&self.phi));
        let _ = writeln!(s, "phi2 = {}", render_trig(&self.phi2));
        let _ = writeln!(s, "record_every = {}", self.record_every);
        let _ = writeln!(s, "profile = {}", self.profile.name());
        let quad = match self.quadrature {
            Quadrature::ExponentialTrapezoid => "trapezoid",
            Quadrature::ExponentialEuler => "euler",
        };
        let _ = writeln!(s, "quadrature = {quad}");
        let _ = writeln!(s, "max_courant = {}", opt(self.max_courant));
        let _ = writeln!(s, "censor_budget = {}", format_f64(self.censor_budget));
        if let Some(k) = self.suite {
            let _ = writeln!(s, "suite = {}", k.name());
        }
        s
    }
}
