//! Experiment configuration: a flat `key = value` file plus overrides.
//!
//! Lists are comma separated. `xi_grid` takes either a list of values or a
//! `log10` range written `lo:step:hi`. `structure_c` accepts `preset` as one
//! of its entries. `lambda = learned` turns on noise estimation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sbldf::synth::{DictKind, SignalKind, Structure};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Experiment {
    Measurements,
    Coherence,
    Tracking,
    Runtime,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Measurements => "measurements",
            Experiment::Coherence => "coherence",
            Experiment::Tracking => "tracking",
            Experiment::Runtime => "runtime",
        }
    }
}

impl FromStr for Experiment {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "measurements" => Ok(Experiment::Measurements),
            "coherence" => Ok(Experiment::Coherence),
            "tracking" => Ok(Experiment::Tracking),
            "runtime" => Ok(Experiment::Runtime),
            _ => Err(ConfigError::Invalid(format!(
                "unknown experiment `{s}` (expected measurements, coherence, tracking or runtime)"
            ))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Em,
    Fml,
}

impl SolverChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SolverChoice::Em => "em",
            SolverChoice::Fml => "fml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoisePolicy {
    Fixed(f64),
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverChoice,
    pub n: usize,
    pub s: usize,
    pub m: Vec<usize>,
    pub sigma_obs2: Vec<f64>,
    pub sigma_dyn2: Vec<f64>,
    pub support_errors: Vec<usize>,
    /// Per-element swap probability; when set it replaces `support_errors`.
    pub swap_prob: Option<f64>,
    pub structure_c: Vec<Structure>,
    pub dict: DictKind,
    pub block_size: usize,
    pub signal: SignalKind,
    /// Used where ξ is not searched.
    pub xi: f64,
    pub xi_grid: Vec<f64>,
    pub steps: usize,
    pub innovation_prob: f64,
    pub n_values: Vec<usize>,
    pub m_ratio: f64,
    pub lambda: NoisePolicy,
    /// Initial noise variance when it is learned.
    pub lambda_init: f64,
    pub tau_em: f64,
    pub tau_fml: f64,
    pub tol: f64,
    pub max_iters: usize,
}

/// `10^lo, 10^(lo+step), …, 10^hi`.
pub fn log10_grid(lo: f64, step: f64, hi: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as i64;
    (0..=count)
        .map(|k| {
            // round so that e.g. 10^0.3 is the same value for every grid
            let e = ((lo + k as f64 * step) * 1e9).round() / 1e9;
            10f64.powf(e)
        })
        .collect()
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            trials: 20,
            seed: 1,
            solver: SolverChoice::Em,
            n: 100,
            s: 25,
            m: vec![42],
            sigma_obs2: vec![1e-3],
            sigma_dyn2: vec![1e-4],
            support_errors: vec![0],
            swap_prob: Some(0.1),
            structure_c: vec![Structure::Preset],
            dict: DictKind::LocalCoherentScaled,
            block_size: 4,
            signal: SignalKind::GaussianNonzeros,
            xi: 1.0,
            xi_grid: log10_grid(-2.0, 0.1, 2.0),
            steps: 30,
            innovation_prob: 0.1,
            n_values: vec![512, 1024, 2048],
            m_ratio: 0.25,
            lambda: NoisePolicy::Learned,
            lambda_init: 1e-3,
            tau_em: 1e-4,
            tau_fml: 1e-1,
            tol: 1e-4,
            max_iters: 2000,
        };
        match experiment {
            Experiment::Measurements => ExperimentConfig {
                trials: 240,
                solver: SolverChoice::Fml,
                n: 512,
                s: 16,
                m: (2..=12).map(|k| 16 * k).collect(),
                support_errors: vec![0, 4, 8, 16],
                swap_prob: None,
                dict: DictKind::Iid,
                structure_c: vec![Structure::Param(1.0)],
                lambda: NoisePolicy::Fixed(1e-3),
                signal: SignalKind::UnitNonzeros,
                ..base
            },
            Experiment::Coherence => ExperimentConfig {
                sigma_obs2: log10_grid(-8.0, 1.0, -3.0),
                ..base
            },
            Experiment::Tracking => ExperimentConfig {
                trials: 1,
                sigma_obs2: vec![1e-6],
                xi: 0.1,
                ..base
            },
            Experiment::Runtime => ExperimentConfig {
                trials: 24,
                s: 16,
                dict: DictKind::Iid,
                structure_c: vec![Structure::Param(1.0)],
                lambda: NoisePolicy::Fixed(1.2e-3),
                ..base
            },
        }
    }

    /// Defaults for `experiment`, then the file contents, then `overrides`.
    pub fn load(
        experiment: Experiment,
        file: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(experiment);
        if let Some(text) = file {
            for (k, v) in parse_pairs(text)? {
                if k == "experiment" {
                    if v.parse::<Experiment>()? != experiment {
                        return Err(ConfigError::Invalid(format!(
                            "config file is for `{v}` but `{experiment}` was requested"
                        )));
                    }
                    continue;
                }
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::Value {
            key: key.into(),
            value: value.into(),
        };
        let v = value.trim();
        match key {
            "trials" => self.trials = scalar(v).ok_or_else(bad)?,
            "seed" => self.seed = scalar(v).ok_or_else(bad)?,
            "solver" => {
                self.solver = match v {
                    "em" => SolverChoice::Em,
                    "fml" => SolverChoice::Fml,
                    _ => return Err(bad()),
                }
            }
            "n" => self.n = scalar(v).ok_or_else(bad)?,
            "s" => self.s = scalar(v).ok_or_else(bad)?,
            "m" => self.m = list(v).ok_or_else(bad)?,
            "sigma_obs2" => self.sigma_obs2 = list(v).ok_or_else(bad)?,
            "sigma_dyn2" => self.sigma_dyn2 = list(v).ok_or_else(bad)?,
            "support_errors" => {
                self.support_errors = list(v).ok_or_else(bad)?;
                self.swap_prob = None;
            }
            "swap_prob" => {
                self.swap_prob = match v {
                    "none" => None,
                    _ => Some(scalar(v).ok_or_else(bad)?),
                }
            }
            "structure_c" => {
                self.structure_c = v
                    .split(',')
                    .map(|p| match p.trim() {
                        "preset" => Some(Structure::Preset),
                        t => t.parse().ok().map(Structure::Param),
                    })
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?
            }
            "dict" => self.dict = DictKind::parse(v).ok_or_else(bad)?,
            "block_size" => self.block_size = scalar(v).ok_or_else(bad)?,
            "signal" => {
                self.signal = match v {
                    "gaussian" | "gaussian_nonzeros" => SignalKind::GaussianNonzeros,
                    "unit" | "unit_nonzeros" => SignalKind::UnitNonzeros,
                    _ => return Err(bad()),
                }
            }
            "xi" => self.xi = scalar(v).ok_or_else(bad)?,
            "xi_grid" => {
                let parts: Vec<&str> = v.split(':').collect();
                self.xi_grid = match parts[..] {
                    [lo, step, hi] => {
                        let (lo, step, hi): (f64, f64, f64) = (
                            scalar(lo).ok_or_else(bad)?,
                            scalar(step).ok_or_else(bad)?,
                            scalar(hi).ok_or_else(bad)?,
                        );
                        if !(step > 0.0 && hi >= lo) {
                            return Err(bad());
                        }
                        log10_grid(lo, step, hi)
                    }
                    _ => list(v).ok_or_else(bad)?,
                }
            }
            "steps" => self.steps = scalar(v).ok_or_else(bad)?,
            "innovation_prob" => self.innovation_prob = scalar(v).ok_or_else(bad)?,
            "n_values" => self.n_values = list(v).ok_or_else(bad)?,
            "m_ratio" => self.m_ratio = scalar(v).ok_or_else(bad)?,
            "lambda" => {
                self.lambda = match v {
                    "learned" => NoisePolicy::Learned,
                    _ => NoisePolicy::Fixed(scalar(v).ok_or_else(bad)?),
                }
            }
            "lambda_init" => self.lambda_init = scalar(v).ok_or_else(bad)?,
            "tau_em" => self.tau_em = scalar(v).ok_or_else(bad)?,
            "tau_fml" => self.tau_fml = scalar(v).ok_or_else(bad)?,
            "tol" => self.tol = scalar(v).ok_or_else(bad)?,
            "max_iters" => self.max_iters = scalar(v).ok_or_else(bad)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.m.is_empty()
            || self.sigma_obs2.is_empty()
            || self.sigma_dyn2.is_empty()
            || self.support_errors.is_empty()
            || self.structure_c.is_empty()
            || self.xi_grid.is_empty()
            || self.n_values.is_empty()
        {
            return fail("grids must be nonempty");
        }
        if self.s == 0 || self.s > self.n {
            return fail("need 1 <= s <= n");
        }
        if self.m.iter().chain(&self.n_values).any(|&v| v == 0)
            || self.steps == 0
            || self.block_size == 0
        {
            return fail("sizes must be positive");
        }
        let nonneg = |v: &f64| *v >= 0.0 && v.is_finite();
        if !self
            .sigma_obs2
            .iter()
            .chain(&self.sigma_dyn2)
            .chain(&self.xi_grid)
            .all(nonneg)
            || !nonneg(&self.xi)
        {
            return fail("variances and xi values must be finite and >= 0");
        }
        if self
            .structure_c
            .iter()
            .any(|c| matches!(c, Structure::Param(v) if !(*v >= 1.0 && v.is_finite())))
        {
            return fail("structure_c values must be >= 1");
        }
        if self.dict != DictKind::Iid {
            let sizes: &[usize] = if self.experiment == Experiment::Runtime {
                &self.n_values
            } else {
                std::slice::from_ref(&self.n)
            };
            if sizes.iter().any(|n| n % self.block_size != 0) {
                return fail("block_size must divide n for blocked dictionaries");
            }
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.innovation_prob) || self.swap_prob.is_some_and(|p| !prob(p)) {
            return fail("probabilities must lie in [0, 1]");
        }
        if !(self.m_ratio > 0.0 && self.m_ratio <= 1.0) {
            return fail("m_ratio must lie in (0, 1]");
        }
        if let NoisePolicy::Fixed(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return fail("lambda must be positive");
            }
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.lambda_init) && pos(self.tau_em) && pos(self.tau_fml) && pos(self.tol))
            || self.max_iters == 0
        {
            return fail("solver tolerances must be positive");
        }
        Ok(())
    }
}

fn scalar<T: FromStr>(v: &str) -> Option<T> {
    v.trim().parse().ok()
}

fn list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(scalar).collect()
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if seen.insert(k.to_string(), ()).is_some() {
            return Err(ConfigError::Invalid(format!(
                "line {}: duplicate key `{k}`",
                i + 1
            )));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Splits `key=value` as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or(ConfigError::Syntax { line: 0 })
}
