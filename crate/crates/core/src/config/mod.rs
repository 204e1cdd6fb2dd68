//! Scenario files (TOML), command-line overrides, synthetic demand and the
//! manifest written next to every run's outputs.

mod flows;

pub use flows::{generate_flow_patterns, BaseShape, PatternNoise, Staircase, DEFAULT_LEVELS, DEFAULT_SHARES};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError};
use crate::eval::{Ablation, EvalSetup, TrainSetup};
use crate::nn::{NetConfig, NnError};
use crate::sim::{FlowProfile, ProfileError};
use crate::teachers::TeacherConfig;
use crate::trainer::{TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override {0:?}: expected dotted.key=value")]
    Override(String),
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where training demand comes from: CSV files when listed, otherwise
/// perturbed copies of `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSource {
    pub files: Vec<PathBuf>,
    pub patterns: usize,
    pub seed: u64,
    pub noise: PatternNoise,
    pub base: BaseShape,
}

impl Default for FlowSource {
    fn default() -> Self {
        Self { files: Vec::new(), patterns: 140, seed: 2024, noise: PatternNoise::default(), base: BaseShape::default() }
    }
}

impl FlowSource {
    pub fn profiles(&self) -> Result<Vec<FlowProfile>, ConfigError> {
        if !self.files.is_empty() {
            return Ok(self.files.iter().map(|f| FlowProfile::load(f)).collect::<Result<_, _>>()?);
        }
        Ok(generate_flow_patterns(&self.base.profile()?, self.patterns, self.seed, &self.noise)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Simulation seeds every method is scored on.
    pub seeds: Vec<u64>,
    /// Held-out patterns drawn from the base shape with `pattern_seed`.
    pub patterns: usize,
    pub pattern_seed: u64,
    pub staircase: Staircase,
    pub monotonicity_bins: usize,
    /// Relative band used when comparing "All" scores.
    pub tolerance: f64,
    /// Training seeds of the ablation suite.
    pub train_seeds: Vec<u64>,
    pub ablations: Vec<Ablation>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            patterns: 4,
            pattern_seed: 777,
            staircase: Staircase::default(),
            monotonicity_bins: 10,
            tolerance: 0.02,
            train_seeds: (0..5).collect(),
            ablations: Ablation::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub env: EnvConfig,
    pub flows: FlowSource,
    pub teachers: TeacherConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            env: EnvConfig::default(),
            flows: FlowSource::default(),
            teachers: TeacherConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Reads `path` (or the defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|source| ConfigError::Parse { path: p.display().to_string(), source })?
            }
            None => toml::Table::try_from(Self::default())
                .map_err(|e| ConfigError::Invalid(format!("defaults do not serialize: {e}")))?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        let e = &self.eval;
        if e.seeds.is_empty() || e.patterns == 0 || e.monotonicity_bins == 0 {
            return Err(ConfigError::Invalid("eval needs seeds, patterns and monotonicity bins".into()));
        }
        if !(e.tolerance >= 0.0) {
            return Err(ConfigError::Invalid("eval tolerance must be >= 0".into()));
        }
        if self.flows.files.is_empty() && self.flows.patterns == 0 {
            return Err(ConfigError::Invalid("no flow files and zero patterns".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.net.seed = seed;
        self
    }

    pub fn train_setup(&self) -> Result<TrainSetup, ConfigError> {
        Ok(TrainSetup {
            net: self.net.clone(),
            train: self.train.clone(),
            env: self.env.clone(),
            teachers: self.teachers.clone(),
            profiles: self.flows.profiles()?,
        })
    }

    pub fn eval_setup(&self) -> Result<EvalSetup, ConfigError> {
        let e = &self.eval;
        let base = self.flows.base.profile()?;
        Ok(EvalSetup {
            env: self.env.clone(),
            profiles: generate_flow_patterns(&base, e.patterns, e.pattern_seed, &self.flows.noise)?,
            seeds: e.seeds.clone(),
            staircase: Some(e.staircase.profile()?),
            monotonicity_bins: e.monotonicity_bins,
        })
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c=value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(spec.to_string());
    let (key, raw) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad());
    }
    let (last, path) = parts.split_last().ok_or_else(bad)?;
    let mut node = table;
    for p in path {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(bad)?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Provenance of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub scenario: ScenarioConfig,
    pub outputs: Vec<PathBuf>,
    /// Parameter checksum of the policy produced or evaluated, if any.
    pub checksum: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_path: Option<&Path>, overrides: &[String], scenario: &ScenarioConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_path: config_path.map(Path::to_path_buf),
            overrides: overrides.to_vec(),
            scenario: scenario.clone(),
            outputs: Vec::new(),
            checksum: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
