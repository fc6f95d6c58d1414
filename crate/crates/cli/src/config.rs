//! Experiment settings: per-subcommand defaults, TOML config files, flags.
//!
//! Precedence is defaults < config file < flags. Every flag has a TOML key of
//! the same name (`--n-mc` ↔ `n-mc`).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
    #[error("cannot read config {path}: {msg}")]
    File { path: PathBuf, msg: String },
}

fn bad(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    SweepDstar,
    Train,
    Certify,
    Gradcheck,
    BadSolutions,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Gru,
    Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Gru => "gru",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Xavier,
    Symmetric,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    Gd,
    Backtracking,
    Adam,
}

/// Comma-separated values with `a-b` ranges, e.g. `1-5,8,10`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            out.push(part.parse().map_err(|_| format!("cannot parse `{part}`"))?);
        }
        Ok(List(out))
    }
}

fn parse_usize_list(s: &str) -> Result<List<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| format!("bad range `{part}`"))?;
                let b: usize = b.trim().parse().map_err(|_| format!("bad range `{part}`"))?;
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("cannot parse `{part}`"))?),
        }
    }
    Ok(List(out))
}

impl<'de> Deserialize<'de> for List<usize> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Items(Vec<usize>),
            One(usize),
        }
        match Raw::deserialize(de)? {
            Raw::Text(s) => parse_usize_list(&s).map_err(serde::de::Error::custom),
            Raw::Items(v) => Ok(List(v)),
            Raw::One(v) => Ok(List(vec![v])),
        }
    }
}

impl<'de> Deserialize<'de> for List<ModelKind> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Items(Vec<ModelKind>),
        }
        match Raw::deserialize(de)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Items(v) => Ok(List(v)),
        }
    }
}

/// Optional settings shared by the config file and the command line.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    /// Hidden-state width.
    #[arg(long)]
    pub d: Option<usize>,
    /// Training sequence length.
    #[arg(long)]
    pub k: Option<usize>,
    /// Memoryless teacher weight.
    #[arg(long)]
    pub wstar: Option<f64>,
    /// Teacher state dimension(s) for LDS teachers, e.g. `3` or `1,2,4`.
    #[arg(long, value_parser = parse_usize_list)]
    pub dstar: Option<List<usize>>,
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    /// Variance of the Gaussian part of the init.
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerName>,
    /// Learning rate (initial trial step for backtracking).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stop once the training loss is at or below this value.
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation lengths, e.g. `1-15`.
    #[arg(long, value_parser = parse_usize_list)]
    pub lengths: Option<List<usize>>,
    /// Monte-Carlo sample count for gated-cell evaluation.
    #[arg(long)]
    pub n_mc: Option<usize>,
    /// Include the adversarial regime.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adversarial: Option<bool>,
    /// Longest corrupted length in the adversarial regime.
    #[arg(long)]
    pub l_adv: Option<usize>,
    /// Comma-separated subset of `linear,gru,lstm`.
    #[arg(long)]
    pub models: Option<List<ModelKind>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! layer {
    ($base:expr, $top:expr, $($f:ident),*) => {
        Overrides { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Overrides {
    /// Values in `top` win.
    pub fn layered(self, top: Overrides) -> Overrides {
        layer!(
            self, top, d, k, wstar, dstar, init, sigma2, optimizer, lr, steps, stop_tol, batch, seed, lengths, n_mc,
            adversarial, l_adv, models, out
        )
    }

    pub fn from_toml(text: &str) -> Result<Overrides, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_file(path: &Path) -> Result<Overrides, ConfigError> {
        let err = |msg: String| ConfigError::File { path: path.to_path_buf(), msg };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_toml(&text).map_err(err)
    }
}

/// Fully resolved settings for one subcommand invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub models: Vec<ModelKind>,
    pub d: usize,
    pub k: usize,
    pub wstar: f64,
    pub dstar: Vec<usize>,
    pub init: InitKind,
    pub sigma2: f64,
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub steps: usize,
    pub stop_tol: f64,
    pub batch: usize,
    pub seed: u64,
    pub lengths: Vec<usize>,
    pub n_mc: usize,
    pub adversarial: bool,
    pub l_adv: usize,
    #[serde(skip)]
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn defaults(experiment: Experiment) -> ExperimentSpec {
        let base = ExperimentSpec {
            experiment,
            models: vec![ModelKind::Linear],
            d: 30,
            k: 5,
            wstar: 1.0,
            dstar: Vec::new(),
            init: InitKind::Xavier,
            sigma2: 0.01,
            optimizer: OptimizerName::Adam,
            lr: 1e-3,
            steps: 40_000,
            stop_tol: 0.0,
            batch: 128,
            seed: 0,
            lengths: (1..=15).collect(),
            n_mc: 20_000,
            adversarial: false,
            l_adv: 15,
            out: PathBuf::from("out"),
        };
        let all = vec![ModelKind::Linear, ModelKind::Gru, ModelKind::Lstm];
        match experiment {
            Experiment::Fig1 => ExperimentSpec { models: all, adversarial: true, ..base },
            Experiment::Fig2 => ExperimentSpec { models: all, adversarial: true, dstar: vec![3], ..base },
            Experiment::Fig3 => ExperimentSpec {
                d: 10,
                k: 3,
                init: InitKind::Symmetric,
                optimizer: OptimizerName::Backtracking,
                lr: 1.0,
                steps: 100_000,
                stop_tol: 1e-12,
                ..base
            },
            Experiment::Fig4 => ExperimentSpec {
                d: 10,
                init: InitKind::Identity,
                sigma2: 1e-5,
                optimizer: OptimizerName::Gd,
                lr: 0.05,
                steps: 100_000,
                stop_tol: 1e-12,
                ..base
            },
            Experiment::SweepDstar => ExperimentSpec {
                d: 200,
                dstar: vec![1, 2, 4, 6, 8],
                steps: 20_000,
                lengths: (6..=10).collect(),
                ..base
            },
            Experiment::Train => base,
            Experiment::Certify => ExperimentSpec {
                d: 4,
                k: 6,
                optimizer: OptimizerName::Backtracking,
                lr: 0.5,
                steps: 1_000_000,
                stop_tol: 1e-14,
                ..base
            },
            Experiment::Gradcheck => base,
            Experiment::BadSolutions => ExperimentSpec { d: 4, k: 3, lengths: vec![1, 2, 3, 4, 5, 10], ..base },
        }
    }

    pub fn resolve(experiment: Experiment, o: Overrides) -> Result<ExperimentSpec, ConfigError> {
        let b = Self::defaults(experiment);
        let spec = ExperimentSpec {
            experiment,
            models: o.models.map_or(b.models, |l| l.0),
            d: o.d.unwrap_or(b.d),
            k: o.k.unwrap_or(b.k),
            wstar: o.wstar.unwrap_or(b.wstar),
            dstar: o.dstar.map_or(b.dstar, |l| l.0),
            init: o.init.unwrap_or(b.init),
            sigma2: o.sigma2.unwrap_or(b.sigma2),
            optimizer: o.optimizer.unwrap_or(b.optimizer),
            lr: o.lr.unwrap_or(b.lr),
            steps: o.steps.unwrap_or(b.steps),
            stop_tol: o.stop_tol.unwrap_or(b.stop_tol),
            batch: o.batch.unwrap_or(b.batch),
            seed: o.seed.unwrap_or(b.seed),
            lengths: o.lengths.map_or(b.lengths, |l| l.0),
            n_mc: o.n_mc.unwrap_or(b.n_mc),
            adversarial: o.adversarial.unwrap_or(b.adversarial),
            l_adv: o.l_adv.unwrap_or(b.l_adv),
            out: o.out.unwrap_or(b.out),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d == 0 {
            return Err(bad("d", "must be at least 1"));
        }
        if self.k < 2 {
            return Err(bad("k", "must be at least 2"));
        }
        if !self.wstar.is_finite() || self.wstar == 0.0 {
            return Err(bad("wstar", "must be finite and nonzero"));
        }
        if self.dstar.contains(&0) {
            return Err(bad("dstar", "entries must be at least 1"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(bad("sigma2", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad("lr", "must be positive"));
        }
        if self.steps == 0 {
            return Err(bad("steps", "must be at least 1"));
        }
        if !(self.stop_tol.is_finite() && self.stop_tol >= 0.0) {
            return Err(bad("stop-tol", "must be non-negative"));
        }
        if self.batch == 0 {
            return Err(bad("batch", "must be at least 1"));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(bad("lengths", "need at least one length, all at least 1"));
        }
        if self.n_mc == 0 {
            return Err(bad("n-mc", "must be at least 1"));
        }
        if self.adversarial && self.l_adv <= self.k {
            return Err(bad("l-adv", format!("must exceed k = {}", self.k)));
        }
        if self.models.is_empty() {
            return Err(bad("models", "need at least one model"));
        }
        match self.experiment {
            Experiment::Fig2 if self.dstar.len() != 1 => Err(bad("dstar", "fig2 takes a single teacher dimension")),
            Experiment::SweepDstar if self.dstar.is_empty() => Err(bad("dstar", "need at least one value")),
            Experiment::Train if self.models.len() != 1 => Err(bad("models", "train takes a single model")),
            Experiment::Train if self.dstar.len() > 1 => Err(bad("dstar", "train takes at most one teacher dimension")),
            Experiment::Fig3 | Experiment::Fig4 | Experiment::Certify if self.models != [ModelKind::Linear] => {
                Err(bad("models", "only the linear model is supported here"))
            }
            Experiment::Fig3 if self.init != InitKind::Symmetric => {
                Err(bad("init", "the slackness profile needs a symmetric init"))
            }
            Experiment::BadSolutions if self.k > self.d => Err(bad("k", "the cyclic construction needs k <= d")),
            _ => Ok(()),
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical TOML rendering.
    /// The output directory is excluded.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
