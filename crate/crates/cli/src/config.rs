//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use brier_align::mechanisms::{Adversary, Epsilon, PipelineKind, PipelineSetting};
use brier_align::solvers::DistractorConfig;

use crate::error::ConfigError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    /// A named preset: `reference`, `selfplay` or `regression_lab`.
    Preset(String),
    /// Path to an instance JSON file, relative to the config file.
    File(PathBuf),
    Generate {
        seed: u64,
        num_contexts: usize,
        num_actions: usize,
        r_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bt,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SquareChipo,
    LogChipo,
    Dpo,
    CdpSample,
    Selfplay,
    RegressionLab,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SquareChipo => "square_chipo",
            Algorithm::LogChipo => "log_chipo",
            Algorithm::Dpo => "dpo",
            Algorithm::CdpSample => "cdp_sample",
            Algorithm::Selfplay => "selfplay",
            Algorithm::RegressionLab => "regression_lab",
        }
    }

    pub fn mode(self) -> Option<Mode> {
        match self {
            Algorithm::Selfplay => Some(Mode::General),
            Algorithm::RegressionLab => None,
            _ => Some(Mode::Bt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    Fixed,
    /// `β` from the oracle formula with the theoretical statistical error at each `n`.
    Oracle,
    /// Every value of `beta_grid` becomes its own series.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    #[serde(default = "default_distractors")]
    pub num_distractors: usize,
    #[serde(default)]
    pub distractors: Option<DistractorConfig>,
}

fn default_distractors() -> usize {
    15
}

impl Default for ClassConfig {
    fn default() -> Self {
        ClassConfig { num_distractors: default_distractors(), distractors: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Theorem,
    Fixed,
}

/// Sweep axes. Each non-empty axis replaces the corresponding base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    #[serde(default)]
    pub epsilon: Vec<Epsilon>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub algorithm: Vec<Algorithm>,
    #[serde(default)]
    pub pipeline: Vec<PipelineKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub instance: InstanceSource,
    pub mode: Mode,
    pub pipeline: PipelineSetting,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub class: ClassConfig,
    #[serde(default = "default_beta_mode")]
    pub beta_mode: BetaMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub beta_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default, rename = "T")]
    pub t: Option<usize>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    pub seeds: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub axes: Axes,
    /// Report quantile level `1 − ζ`.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default)]
    pub budget: Option<u64>,
}

fn default_beta_mode() -> BetaMode {
    BetaMode::Fixed
}

fn default_beta() -> f64 {
    brier_align::presets::REFERENCE_BETA
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::Theorem
}

fn default_zeta() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("not valid JSON: {e}")))?;
        match raw.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(ConfigError::new(
                    "schema_version",
                    format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
                ))
            }
            None => return Err(ConfigError::new("schema_version", "missing or not an integer")),
        }
        let cfg: ExperimentConfig = serde_path_to_error(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let InstanceSource::File(p) = &cfg.instance {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.instance = InstanceSource::File(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new("schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        check_grid("n_grid", &self.n_grid)?;
        if !self.axes.n.is_empty() {
            check_grid("axes.n", &self.axes.n)?;
        }
        if self.seeds == 0 {
            return Err(ConfigError::new("seeds", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ConfigError::new("beta", format!("must be positive, got {}", self.beta)));
        }
        if self.beta_mode == BetaMode::Grid {
            if self.beta_grid.is_empty() {
                return Err(ConfigError::new("beta_grid", "grid mode needs at least one value"));
            }
            if let Some(b) = self.beta_grid.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
                return Err(ConfigError::new("beta_grid", format!("values must be positive, got {b}")));
            }
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(ConfigError::new("zeta", "must lie in (0, 1)"));
        }
        for (i, &a) in self.axes.alpha.iter().enumerate() {
            if !(0.0..=0.5).contains(&a) {
                return Err(ConfigError::new(format!("axes.alpha[{i}]"), format!("must lie in [0, 1/2], got {a}")));
            }
        }
        for (i, e) in self.axes.epsilon.iter().enumerate() {
            e.validate().map_err(|err| ConfigError::new(format!("axes.epsilon[{i}]"), err.to_string()))?;
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(ConfigError::new("eta", "must be positive"));
            }
        }
        for alg in self.algorithms() {
            self.check_algorithm(alg)?;
        }
        Ok(())
    }

    fn check_algorithm(&self, alg: Algorithm) -> Result<(), ConfigError> {
        if let Some(mode) = alg.mode() {
            if mode != self.mode {
                return Err(ConfigError::new(
                    "algorithm",
                    format!("{} needs mode {:?}, config has {:?}", alg.name(), mode, self.mode),
                ));
            }
        }
        for setting in self.settings().map_err(|e| ConfigError::new("pipeline", e))? {
            let cdp = setting.kind() == PipelineKind::Cdp;
            match alg {
                Algorithm::CdpSample if !cdp => {
                    return Err(ConfigError::new("pipeline.kind", "cdp_sample needs the cdp pipeline"))
                }
                Algorithm::SquareChipo | Algorithm::LogChipo | Algorithm::Dpo if cdp => {
                    return Err(ConfigError::new(
                        "pipeline.kind",
                        format!("{} is a local learner; use cdp_sample for the cdp pipeline", alg.name()),
                    ))
                }
                _ => {}
            }
        }
        if alg == Algorithm::Selfplay {
            if self.t.is_none() {
                return Err(ConfigError::new("T", "selfplay needs T"));
            }
            if self.schedule == ScheduleKind::Fixed && self.eta.is_none() {
                return Err(ConfigError::new("eta", "the fixed schedule needs eta"));
            }
        }
        Ok(())
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        if self.axes.algorithm.is_empty() {
            vec![self.algorithm]
        } else {
            self.axes.algorithm.clone()
        }
    }

    pub fn n_values(&self) -> &[usize] {
        if self.axes.n.is_empty() {
            &self.n_grid
        } else {
            &self.axes.n
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        match self.beta_mode {
            BetaMode::Grid => self.beta_grid.clone(),
            _ => vec![self.beta],
        }
    }

    /// Cartesian expansion of the pipeline over the kind, ε and α axes.
    pub fn settings(&self) -> Result<Vec<PipelineSetting>, String> {
        let base = self.pipeline.to_spec();
        let kinds = if self.axes.pipeline.is_empty() { vec![base.kind] } else { self.axes.pipeline.clone() };
        let eps: Vec<Option<Epsilon>> =
            if self.axes.epsilon.is_empty() { vec![base.epsilon] } else { self.axes.epsilon.iter().map(|e| Some(*e)).collect() };
        let alphas: Vec<Option<f64>> =
            if self.axes.alpha.is_empty() { vec![base.alpha] } else { self.axes.alpha.iter().map(|a| Some(*a)).collect() };
        let adversary = base.adversary.unwrap_or(Adversary::Flip);
        let mut out = Vec::new();
        for &kind in &kinds {
            for &e in &eps {
                for &a in &alphas {
                    let spec = brier_align::mechanisms::PipelineSpec {
                        kind,
                        epsilon: match kind {
                            PipelineKind::Clean | PipelineKind::CorruptOnly => None,
                            _ => e,
                        },
                        alpha: match kind {
                            PipelineKind::Clean | PipelineKind::LdpOnly => None,
                            _ => a,
                        },
                        adversary: match kind {
                            PipelineKind::Clean | PipelineKind::LdpOnly => None,
                            _ => Some(adversary),
                        },
                    };
                    let s = PipelineSetting::from_spec(spec).map_err(|e| e.to_string())?;
                    if !out.contains(&s) {
                        out.push(s);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn has_axes(&self) -> bool {
        self.axes != Axes::default()
    }
}

fn check_grid(field: &str, grid: &[usize]) -> Result<(), ConfigError> {
    if grid.is_empty() {
        return Err(ConfigError::new(field, "must not be empty"));
    }
    if grid.contains(&0) {
        return Err(ConfigError::new(field, "values must be positive"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::new(field, "must be strictly increasing"));
    }
    Ok(())
}

/// Deserializes with the failing field path attached to the error.
fn serde_path_to_error(raw: &serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
    match ExperimentConfig::deserialize(raw) {
        Ok(c) => Ok(c),
        Err(e) => {
            // find the first top-level field that fails on its own, for a precise path
            let msg = e.to_string();
            let path = locate_unknown_or_bad_field(raw, &msg);
            Err(ConfigError::new(path, msg))
        }
    }
}

fn locate_unknown_or_bad_field(raw: &serde_json::Value, msg: &str) -> String {
    if let Some(start) = msg.find("unknown field `") {
        let rest = &msg[start + 15..];
        if let Some(end) = rest.find('`') {
            let field = &rest[..end];
            return find_key_path(raw, field).unwrap_or_else(|| field.to_string());
        }
    }
    if let Some(start) = msg.find("missing field `") {
        let rest = &msg[start + 15..];
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    String::new()
}

fn find_key_path(v: &serde_json::Value, key: &str) -> Option<String> {
    match v {
        serde_json::Value::Object(map) => {
            if map.contains_key(key) {
                return Some(key.to_string());
            }
            map.iter().find_map(|(k, child)| find_key_path(child, key).map(|p| format!("{k}.{p}")))
        }
        _ => None,
    }
}
