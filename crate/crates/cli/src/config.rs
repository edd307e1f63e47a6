//! Config documents: loading, merging onto defaults and `--set` overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use fedcom_core::algorithms::AlgoConfig;
use fedcom_core::engine::{Cadence, ExperimentSpec};
use fedcom_core::problems::ProblemSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Invalid user input. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

/// Settings read only by the `measure` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    /// Gaussian test vectors for `measure q`.
    pub q_vectors: usize,
    /// Compression draws per test vector for `measure q`.
    pub q_samples: usize,
    /// G_q cadence for `measure gq` when `cadence.gq_every` is 0.
    pub gq_every: usize,
    /// Model at which `measure heatmap` evaluates gradients; the origin if unset.
    pub heatmap_point: Option<Vec<f64>>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            q_vectors: 100,
            q_samples: 1000,
            gq_every: 10,
            heatmap_point: None,
        }
    }
}

/// A complete experiment description as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub problem: ProblemSpec,
    pub algorithm: AlgoConfig,
    pub seed: u64,
    pub output_path: PathBuf,
    pub cadence: Cadence,
    pub measure: MeasureConfig,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            algorithm: AlgoConfig::default(),
            seed: 0,
            output_path: PathBuf::from("out"),
            cadence: Cadence::default(),
            measure: MeasureConfig::default(),
        }
    }
}

impl ConfigDocument {
    pub fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            problem: self.problem.clone(),
            algorithm: self.algorithm.clone(),
            seed: self.seed,
            cadence: self.cadence.clone(),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }
}

// Objects carrying one of these keys are tagged enums and replace the
// default wholesale instead of merging field by field.
const TAG_KEYS: [&str; 2] = ["kind", "model"];

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<(), ConfigError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !p.keys().any(|k| TAG_KEYS.contains(&k.as_str())) => {
            for (key, value) in p {
                let child = join(path, &key);
                match b.get_mut(&key) {
                    Some(slot) => merge(slot, value, &child)?,
                    None => return Err(ConfigError::new(child, "unknown key")),
                }
            }
            Ok(())
        }
        (slot, value) => {
            *slot = value;
            Ok(())
        }
    }
}

/// Parses `key=value`. The value is read as JSON, falling back to a string.
pub fn parse_override(text: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::new(text, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::new(text, "override key is empty"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut slot = doc;
    let mut walked = String::new();
    for part in key.split('.') {
        walked = join(&walked, part);
        slot = match slot {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| ConfigError::new(&walked, "unknown key"))?,
            _ => return Err(ConfigError::new(&walked, "unknown key")),
        };
    }
    merge(slot, value, key)
}

/// Reads `path` (if any) over the defaults and applies `overrides` in order.
pub fn load_document(path: Option<&Path>, overrides: &[String]) -> Result<ConfigDocument, ConfigError> {
    let mut doc = serde_json::to_value(ConfigDocument::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let user: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new("config", format!("malformed JSON in {}: {e}", path.display())))?;
        if !user.is_object() {
            return Err(ConfigError::new("config", "top level must be a JSON object"));
        }
        merge(&mut doc, user, "")?;
    }
    for text in overrides {
        let (key, value) = parse_override(text)?;
        apply_override(&mut doc, &key, value)?;
    }
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner().to_string())
    })
}
