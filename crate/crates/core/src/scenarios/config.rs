//! JSON scenario files: which builder, its parameters, the model, time
//! grid, environment and solver settings.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::walker::to_steps;
use super::{astronaut_model, build_astronaut, build_stride, walker_model, AstronautConfig, Scenario, ScenarioError, Setup, StrideConfig};
use crate::contact_dynamics::DEFAULT_DAMPING;
use crate::ddp::SolverSettings;
use crate::model::ModelDescription;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Stride(StrideConfig),
    Astronaut(AstronautConfig),
}

fn default_dt() -> f64 {
    0.01
}

fn default_damping() -> f64 {
    DEFAULT_DAMPING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub scenario: ScenarioKind,
    /// Model description file, relative to the config file. Built-in model
    /// of the scenario kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Expected horizon length (s); must equal the phase durations' sum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Defaults to `[0, -9.81]` for walking; reorientation always runs
    /// in zero gravity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<[f64; 2]>,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Half-width of uniform noise added to the warm-start controls.
    #[serde(default)]
    pub warm_start_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A violated config invariant and where it lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io { path: PathBuf, source: std::io::Error },
    /// Syntax or type error; the message carries line and column.
    Parse { path: PathBuf, source: serde_json::Error },
    Invalid(Vec<Issue>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ConfigError::Parse { path, source } => write!(f, "{}: {source}", path.display()),
            ConfigError::Invalid(issues) => {
                let lines: Vec<String> = issues.iter().map(Issue::to_string).collect();
                write!(f, "{}", lines.join("\n"))
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn issue(location: impl Into<String>, message: impl Into<String>) -> Issue {
    Issue {
        location: location.into(),
        message: message.into(),
    }
}

fn from_scenario_error(e: ScenarioError) -> Issue {
    match e {
        ScenarioError::Invalid { field, reason } => issue(format!("scenario.{field}"), reason),
        ScenarioError::Unreachable { .. } => issue("scenario.stride_length", e.to_string()),
        other => issue("scenario", other.to_string()),
    }
}

/// A parsed config together with the directory its relative paths use.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::from_json_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(LoadedConfig {
            config,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    /// Phase durations' sum (s).
    pub fn phase_duration(&self) -> f64 {
        match &self.scenario {
            ScenarioKind::Stride(c) => c.duration(),
            ScenarioKind::Astronaut(c) => c.duration,
        }
    }

    pub fn setup(&self) -> Setup {
        let gravity = match &self.scenario {
            ScenarioKind::Stride(_) => self.gravity.unwrap_or([0.0, -9.81]),
            ScenarioKind::Astronaut(_) => [0.0, 0.0],
        };
        Setup {
            dt: self.dt,
            gravity,
            damping: self.damping,
            settings: self.solver.clone(),
        }
    }

    fn model(&self, base_dir: &Path) -> Result<ModelDescription, Issue> {
        match &self.model {
            Some(p) => ModelDescription::load(&base_dir.join(p)).map_err(|e| issue("model", e.to_string())),
            None => Ok(match self.scenario {
                ScenarioKind::Stride(_) => walker_model(),
                ScenarioKind::Astronaut(_) => astronaut_model(),
            }),
        }
    }

    /// Invariants checkable without building the scenario.
    fn static_issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(issue("dt", "must be positive"));
            return out;
        }
        if !(self.damping >= 0.0) {
            out.push(issue("damping", "must be non-negative"));
        }
        if !(self.warm_start_noise >= 0.0) {
            out.push(issue("warm_start_noise", "must be non-negative"));
        }
        if let Err(e) = self.solver.validate() {
            out.push(issue("solver", e.to_string()));
        }
        match &self.scenario {
            ScenarioKind::Stride(c) => {
                for (field, v) in [
                    ("initial_double_support", c.initial_double_support),
                    ("single_support", c.single_support),
                    ("double_support", c.double_support),
                    ("final_double_support", c.final_double_support),
                    ("touchdown_window", c.touchdown_window),
                ] {
                    if let Err(e) = to_steps(field, v, self.dt) {
                        out.push(from_scenario_error(e));
                    }
                }
                if c.touchdown_window > c.single_support {
                    out.push(issue("scenario.touchdown_window", "longer than single support"));
                }
            }
            ScenarioKind::Astronaut(c) => {
                if let Err(e) = to_steps("duration", c.duration, self.dt) {
                    out.push(from_scenario_error(e));
                }
                if self.gravity.is_some_and(|g| g != [0.0, 0.0]) {
                    out.push(issue("gravity", "reorientation runs in zero gravity"));
                }
            }
        }
        if let Some(h) = self.horizon {
            let sum = self.phase_duration();
            if (h - sum).abs() > 1e-9 {
                out.push(issue("horizon", format!("{h} s does not match the phase durations, which sum to {sum} s")));
            }
        }
        out
    }

    /// All violated invariants, including those found by building.
    pub fn validate(&self, base_dir: &Path) -> Vec<Issue> {
        let mut out = self.static_issues();
        if out.is_empty() {
            if let Err(e) = self.build(base_dir) {
                match e {
                    ConfigError::Invalid(mut issues) => out.append(&mut issues),
                    other => out.push(issue("config", other.to_string())),
                }
            }
        }
        out
    }

    /// Builds the scenario and applies the seeded warm-start noise.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let issues = self.static_issues();
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        let model = self.model(base_dir).map_err(|i| ConfigError::Invalid(vec![i]))?;
        let setup = self.setup();
        let mut scenario = match &self.scenario {
            ScenarioKind::Stride(c) => build_stride(&model, c, &setup),
            ScenarioKind::Astronaut(c) => build_astronaut(&model, c, &setup),
        }
        .map_err(|e| ConfigError::Invalid(vec![from_scenario_error(e)]))?;
        scenario.name = self.name.clone();
        if self.warm_start_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let a = self.warm_start_noise;
            for u in &mut scenario.warm_start {
                u.iter_mut().for_each(|v| *v += rng.gen_range(-a..=a));
            }
        }
        Ok(scenario)
    }
}
