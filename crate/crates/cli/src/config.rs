//! Layered configuration: built-in defaults, then a config file, then flags.
//!
//! The file is TOML unless its extension is `.json`. Every section and field
//! is optional; missing values keep their defaults.

use std::path::Path;

use casande_core::agent::TrainConfig;
use casande_core::bed::DEFAULT_BED_THRESHOLD;
use casande_core::datagen::GeneratorConfig;
use casande_core::environment::EnvConfig;
use casande_core::knowledge::DIFFERENTIAL_THRESHOLD;
use casande_core::metrics::METRIC_NAMES;
use casande_core::shaping::ShapingConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{data, usage, CliResult};

pub const CONFIG_ENV_VAR: &str = "CASANDE_LAB_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Mass above which a pathology belongs to a differential.
    pub threshold: f64,
    /// Expected-information floor below which the designer stops asking.
    pub bed_threshold: f64,
    pub metrics: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DIFFERENTIAL_THRESHOLD,
            bed_threshold: DEFAULT_BED_THRESHOLD,
            metrics: METRIC_NAMES.iter().map(|m| m.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub env: EnvConfig,
    pub shaping: ShapingConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
}

/// Dotted paths present in `raw` but absent from the serialized config.
fn unknown_keys(raw: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(raw), Value::Object(known)) = (raw, known) else {
        return;
    };
    for (key, value) in raw {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match known.get(key) {
            Some(k) => unknown_keys(value, k, &path, out),
            None => out.push(path),
        }
    }
}

impl FileConfig {
    /// Parses a config, rejecting keys no setting reads (typos included).
    #[cfg(test)]
    pub fn parse(text: &str, json: bool) -> CliResult<Self> {
        Self::parse_labeled(text, json, "config")
    }

    fn parse_labeled(text: &str, json: bool, label: &str) -> CliResult<Self> {
        let raw: Value = if json {
            serde_json::from_str(text).map_err(|e| usage(format!("{label}: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| usage(format!("{label}: {e}")))?
        };
        let cfg: Self = serde_json::from_value(raw.clone()).map_err(|e| usage(format!("{label}: {e}")))?;
        let known = serde_json::to_value(&cfg).map_err(usage)?;
        let mut unknown = Vec::new();
        unknown_keys(&raw, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(usage(format!("{label}: unknown key(s) {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json"));
        Self::parse_labeled(&text, json, &path.display().to_string())
    }

    /// Defaults when `path` is `None`.
    pub fn load_optional(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
