//! Run configuration: an optional JSON config file whose per-command sections
//! are overridden by flags, plus scenario lookup.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};
use vda_core::regret::AscentConfig;
use vda_core::scenario::{default_scenario, Scenario};
use vda_core::trainer::{BusinessConstraint, TrainerConfig, Variant};

use crate::error::CliError;

/// Directory searched for scenario names that are not paths.
pub const SCENARIO_DIR_ENV: &str = "VDA_SCENARIO_DIR";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Scenario name or path used when `--scenario` is absent.
    pub scenario: Option<String>,
    /// Partial trainer configuration; missing keys take the variant defaults.
    #[serde(default)]
    pub train: Map<String, Value>,
    #[serde(default)]
    pub evaluate: EvalSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub ascent: Option<AscentConfig>,
    pub business: Option<Vec<BusinessConstraint>>,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Resolves a scenario argument: an existing path, then a name inside
/// `$VDA_SCENARIO_DIR` (with or without `.json`), then the built-in
/// `default`.
pub fn resolve_scenario(arg: Option<&str>) -> Result<Scenario, CliError> {
    let name = arg.unwrap_or("default");
    let mut candidates = vec![PathBuf::from(name)];
    if let Some(dir) = std::env::var_os(SCENARIO_DIR_ENV) {
        let dir = PathBuf::from(dir);
        candidates.push(dir.join(name));
        candidates.push(dir.join(format!("{name}.json")));
    }
    if let Some(path) = candidates.iter().find(|p| p.is_file()) {
        return Ok(Scenario::from_json(&read_text(path)?)?);
    }
    if name == "default" {
        return Ok(default_scenario());
    }
    Err(CliError::config(format!("scenario {name:?} not found")))
}

/// Variant defaults, then the config file section, then flags.
pub fn trainer_config(
    section: &Map<String, Value>,
    variant_flag: Option<Variant>,
    scenario_seed: u64,
) -> Result<TrainerConfig, CliError> {
    let from_file = match section.get("variant") {
        Some(v) => Some(
            serde_json::from_value::<Variant>(v.clone()).map_err(|e| CliError::config(format!("train.variant: {e}")))?,
        ),
        None => None,
    };
    let variant = variant_flag
        .or(from_file)
        .ok_or_else(|| CliError::config("no variant given (use --variant or train.variant)"))?;
    let mut merged = match serde_json::to_value(TrainerConfig::for_variant(variant)) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("trainer config serialises to an object"),
    };
    merged.insert("seed".into(), Value::from(scenario_seed));
    for (k, v) in section {
        merged.insert(k.clone(), v.clone());
    }
    merged.insert("variant".into(), serde_json::to_value(variant).expect("variant serialises"));
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::config(format!("train section: {e}")))
}
