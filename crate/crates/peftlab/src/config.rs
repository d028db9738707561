//! Experiment configuration: one JSON document with an optional block per
//! verifier. Missing blocks take their defaults; unknown fields anywhere are
//! rejected.

use std::path::Path;
use std::sync::OnceLock;

use peftlab_core::geometry::{MapFamily, NetFamily, SubspaceSuiteConfig};
use peftlab_core::perturbation::{PerturbationConfig, RobustnessConfig};
use peftlab_core::scaling::{increment_task_config, ScalingStudyConfig};
use peftlab_core::truncation::{TeacherConfig, TruncationSuiteConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: &str = "1";

/// The shipped JSON Schema; every document is checked against it on load.
pub const SCHEMA: &str = include_str!("../schema/config.schema.json");

fn schema_validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("schema is valid JSON");
        jsonschema::validator_for(&schema).expect("schema compiles")
    })
}

/// Schema violations as `pointer: message` lines, empty when the value conforms.
pub fn schema_errors(value: &serde_json::Value) -> Vec<String> {
    schema_validator()
        .iter_errors(value)
        .map(|e| {
            let at = e.instance_path().to_string();
            format!("{}: {e}", if at.is_empty() { "/" } else { at.as_str() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    #[serde(default)]
    pub nets: NetFamily,
    #[serde(default)]
    pub maps: MapFamily,
    #[serde(default = "CapacityConfig::default_trials")]
    pub trials: usize,
    /// Multiplier on the bound before comparison. Anything but 1 is a
    /// deliberately corrupted formula for mutation testing.
    #[serde(default = "CapacityConfig::default_bound_scale")]
    pub bound_scale: f64,
}

impl CapacityConfig {
    fn default_trials() -> usize {
        1000
    }
    fn default_bound_scale() -> f64 {
        1.0
    }
}

impl Default for CapacityConfig {
    fn default() -> Self {
        Self { nets: NetFamily::default(), maps: MapFamily::default(), trials: 1000, bound_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistStatsConfig {
    #[serde(default = "increment_task_config")]
    pub teacher: TeacherConfig,
    #[serde(default = "DistStatsConfig::default_trials")]
    pub trials: usize,
    #[serde(default = "DistStatsConfig::default_bins")]
    pub bins: usize,
    /// Trials in which FFT must be wider for the direction to be reported as matching.
    #[serde(default = "DistStatsConfig::default_required")]
    pub required_wider: usize,
}

impl DistStatsConfig {
    fn default_trials() -> usize {
        30
    }
    fn default_bins() -> usize {
        41
    }
    fn default_required() -> usize {
        27
    }
}

impl Default for DistStatsConfig {
    fn default() -> Self {
        Self { teacher: increment_task_config(), trials: 30, bins: 41, required_wider: 27 }
    }
}

/// The document as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace: Option<SubspaceSuiteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<CapacityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationSuiteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingStudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_stats: Option<DistStatsConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            seed: None,
            subspace: None,
            capacity: None,
            truncation: None,
            perturbation: None,
            robustness: None,
            scaling: None,
            dist_stats: None,
        }
    }
}

/// Every block filled in, plus the seed that will be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolved {
    pub schema_version: String,
    pub seed: u64,
    pub subspace: SubspaceSuiteConfig,
    pub capacity: CapacityConfig,
    pub truncation: TruncationSuiteConfig,
    pub perturbation: PerturbationConfig,
    pub robustness: RobustnessConfig,
    pub scaling: ScalingStudyConfig,
    pub dist_stats: DistStatsConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: does not match the config schema:\n  {}", errors.join("\n  "))]
    Schema { path: String, errors: Vec<String> },
    #[error("{0}")]
    Invalid(String),
}

impl ExperimentConfig {
    /// Typed parse first so unknown or mistyped fields carry a line and
    /// column, then the schema for range and shape constraints.
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let parse_err = |e: serde_json::Error| ConfigError::Parse {
            path: path.to_string(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        };
        let cfg: Self = serde_json::from_str(text).map_err(parse_err)?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        let errors = schema_errors(&value);
        if !errors.is_empty() {
            return Err(ConfigError::Schema { path: path.to_string(), errors });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        Self::parse(&text, &shown)
    }

    /// Fills defaults; `seed` from the command line wins over the file.
    pub fn resolve(self, seed: Option<u64>) -> Result<Resolved, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version: expected \"{SCHEMA_VERSION}\", found \"{}\"",
                self.schema_version
            )));
        }
        let seed = seed.or(self.seed).ok_or_else(|| ConfigError::Invalid("seed: required via --seed or the config".into()))?;
        let r = Resolved {
            schema_version: self.schema_version,
            seed,
            subspace: self.subspace.unwrap_or_default(),
            capacity: self.capacity.unwrap_or_default(),
            truncation: self.truncation.unwrap_or_default(),
            perturbation: self.perturbation.unwrap_or_default(),
            robustness: self.robustness.unwrap_or_default(),
            scaling: self.scaling.unwrap_or_default(),
            dist_stats: self.dist_stats.unwrap_or_default(),
        };
        r.validate()?;
        Ok(r)
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name}: must be positive, found {v}")))
    }
}

impl Resolved {
    /// Tolerances positive and counts usable; deeper checks happen in the verifiers.
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("capacity.bound_scale", self.capacity.bound_scale)?;
        positive("truncation.plateau_tol", self.truncation.plateau_tol)?;
        positive("perturbation.taylor_step_large", self.perturbation.taylor_step_large)?;
        positive("perturbation.taylor_step_small", self.perturbation.taylor_step_small)?;
        let (lo, hi) = self.perturbation.exponent_band;
        if !(lo <= hi) {
            return Err(ConfigError::Invalid("perturbation.exponent_band: lower bound above upper".into()));
        }
        if !(self.scaling.noise_floor >= 0.0) {
            return Err(ConfigError::Invalid("scaling.noise_floor: must be non-negative".into()));
        }
        for (name, n) in [
            ("capacity.trials", self.capacity.trials),
            ("perturbation.n_instances", self.perturbation.n_instances),
            ("scaling.trials", self.scaling.trials),
            ("robustness.trials", self.robustness.trials),
            ("dist_stats.trials", self.dist_stats.trials),
        ] {
            if n == 0 {
                return Err(ConfigError::Invalid(format!("{name}: must be at least 1")));
            }
        }
        if self.dist_stats.bins < 3 {
            return Err(ConfigError::Invalid("dist_stats.bins: must be at least 3".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
