//! Experiment configuration (TOML) and its validation report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TssError};
use crate::estimator::EpochSchedule;
use crate::models::{make_gaussian_ladder, make_identical_pair, make_uniform_pair, AnalyticModel};
use crate::rung_density::{fixed_global_gamma, GammaMode};
use crate::sampler::CycleParams;
use crate::windows::{build_layout, WindowSpec};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "TSS_SEED";

/// φ used when α = 0 (where `α^{-1/n}` is undefined): the schedule of the
/// default forgetting fraction, so epochs keep their usual lengths.
const FALLBACK_ALPHA: f64 = 0.19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSampler {
    /// Independent draws from the rung's density.
    #[default]
    Exact,
    /// Random-walk Metropolis, `n_md / nu` steps per state move.
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    UniformPair { delta: f64 },
    GaussianLadder {
        l: usize,
        #[serde(default)]
        sampler: StateSampler,
    },
    IdenticalPair,
}

impl ModelSpec {
    pub fn build(&self) -> Result<AnalyticModel> {
        match self {
            ModelSpec::UniformPair { delta } => make_uniform_pair(*delta),
            ModelSpec::GaussianLadder { l, sampler } => {
                let mut m = make_gaussian_ladder(*l)?;
                if *sampler == StateSampler::Kernel {
                    m.family = m.family.without_exact_sampler();
                }
                Ok(m)
            }
            ModelSpec::IdenticalPair => Ok(make_identical_pair()),
        }
    }
}

fn d_eta() -> f64 {
    2.0
}
fn d_alpha() -> f64 {
    0.19
}
fn d_epochs() -> u32 {
    32
}
fn d_eps_gamma() -> f64 {
    0.01
}
fn d_eps_pi() -> f64 {
    0.001
}
fn d_one() -> u64 {
    1
}
fn d_hundred() -> u64 {
    100
}
fn d_one_usize() -> usize {
    1
}
fn d_gamma() -> GammaMode {
    GammaMode::Fisher
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "d_one_usize")]
    pub replicas: usize,
    pub cycles: u64,
    #[serde(default = "d_one_usize")]
    pub nu: usize,
    #[serde(default)]
    pub n_md: usize,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_epochs")]
    pub n_epochs: u32,
    #[serde(default = "d_eps_gamma")]
    pub eps_gamma: f64,
    #[serde(default = "d_eps_pi")]
    pub eps_pi: f64,
    #[serde(default = "d_gamma")]
    pub gamma: GammaMode,
    /// Cycles between rows of the estimates series.
    #[serde(default = "d_hundred")]
    pub report_every: u64,
    /// Cycles between jackknife error evaluations.
    #[serde(default = "d_hundred")]
    pub error_every: u64,
    /// Cycles between visit-control solves.
    #[serde(default = "d_one")]
    pub global_every: u64,
    /// Cycles between trajectory rows; 0 turns the trajectory off.
    #[serde(default = "d_one")]
    pub trajectory_every: u64,
    /// Initial cycles sampled with π = γ and F = 0 while estimates accumulate.
    #[serde(default)]
    pub freeze_cycles: u64,
    #[serde(default)]
    pub initial_rung: usize,
    /// Reference rung for the reported differences and their errors.
    #[serde(default)]
    pub anchor_rung: usize,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelSpec,
    pub windows: WindowSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TssError::Config(e.to_string()))
    }

    /// Read a TOML config, or the config echoed in a run manifest (`.json`).
    /// The seed is then replaced by `TSS_SEED` when set.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| TssError::Config(e.to_string()))?;
            m.config
        } else {
            Self::from_toml(&text)?
        };
        cfg.apply_env_seed()?;
        Ok(cfg)
    }

    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| TssError::Config(format!("{SEED_ENV}={v:?} is not a 64-bit unsigned integer")))?;
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        let a = if self.alpha > 0.0 { self.alpha } else { FALLBACK_ALPHA };
        EpochSchedule::phi_for(a, self.n_epochs)
    }

    pub fn schedule(&self) -> Result<EpochSchedule> {
        EpochSchedule::new(self.phi(), self.alpha)
    }

    pub fn cycle_params(&self) -> CycleParams {
        CycleParams { nu: self.nu, n_md: self.n_md }
    }
}

/// Config echo written next to every run; enough to reproduce it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Manifest { version: env!("CARGO_PKG_VERSION").to_string(), seed: config.seed, config: config.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub phi: f64,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "phi = {:.4}", self.phi)?;
        if self.problems.is_empty() {
            writeln!(f, "ok")
        } else {
            for p in &self.problems {
                writeln!(f, "error: {p}")?;
            }
            Ok(())
        }
    }
}

/// Check everything that can be checked without running; never aborts.
pub fn validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut problems = Vec::new();
    let mut bad = |field: &str, msg: String| problems.push(format!("{field}: {msg}"));

    if !(cfg.eta >= 0.0 && cfg.eta.is_finite()) {
        bad("eta", format!("must be a finite value >= 0, got {}", cfg.eta));
    }
    if !(0.0..1.0).contains(&cfg.alpha) {
        bad("alpha", format!("must lie in [0, 1), got {}", cfg.alpha));
    }
    if cfg.n_epochs == 0 {
        bad("n_epochs", "must be positive".into());
    }
    for (name, v) in [("eps_gamma", cfg.eps_gamma), ("eps_pi", cfg.eps_pi)] {
        if !(v > 0.0 && v <= 1.0) {
            bad(name, format!("must lie in (0, 1], got {v}"));
        }
    }
    if cfg.replicas == 0 {
        bad("replicas", "must be positive".into());
    }
    for (name, v) in [
        ("report_every", cfg.report_every),
        ("error_every", cfg.error_every),
        ("global_every", cfg.global_every),
    ] {
        if v == 0 {
            bad(name, "must be positive".into());
        }
    }
    match cfg.model.build() {
        Err(e) => bad("model", e.to_string()),
        Ok(m) => {
            let family = &m.family;
            let k = family.rung_count();
            if let Err(e) = cfg.cycle_params().check(family) {
                bad("nu", e.to_string());
            }
            if let Err(e) = build_layout(family.grid(), &cfg.windows) {
                bad("windows", e.to_string());
            }
            if let Err(e) = fixed_global_gamma(&cfg.gamma, family) {
                bad("gamma", e.to_string());
            }
            if cfg.initial_rung >= k {
                bad("initial_rung", format!("must be below the rung count {k}"));
            }
            if cfg.anchor_rung >= k {
                bad("anchor_rung", format!("must be below the rung count {k}"));
            }
        }
    }
    ValidationReport { phi: cfg.phi(), problems }
}
