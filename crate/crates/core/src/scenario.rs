//! Versioned JSON scenario files and the bundled default scenarios.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SimConfig};
use crate::engine::Scenario;
use crate::faults::{validate_scenario, FaultEvent, ValidationError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    /// Emit SVG plots next to the run outputs.
    pub plots: bool,
    /// Spacing of the plot series embedded in the summary (s).
    pub series_stride: f64,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            plots: false,
            series_stride: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub config: SimConfig,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub output: OutputOptions,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid faults: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Faults(Vec<ValidationError>),
}

impl ScenarioFile {
    pub fn new(name: impl Into<String>, config: SimConfig, faults: Vec<FaultEvent>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            description: String::new(),
            config,
            faults,
            output: OutputOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema {
                found: self.schema_version,
            });
        }
        self.config.validate()?;
        validate_scenario(&self.faults, &self.config.circuit).map_err(ScenarioError::Faults)?;
        if !(self.output.series_stride > 0.0) {
            return Err(ConfigError::new("output.series_stride", "must be positive").into());
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            config: self.config.clone(),
            faults: self.faults.clone(),
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    scenario_from_value(value)
}

pub fn scenario_from_value(value: serde_json::Value) -> Result<ScenarioFile, ScenarioError> {
    // check the version before the typed parse so old files get a clear message
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64);
    match version {
        None => return Err(ScenarioError::Parse("missing schema_version".into())),
        Some(v) if v != SCHEMA_VERSION as u64 => {
            return Err(ScenarioError::Schema { found: v as u32 })
        }
        _ => {}
    }
    let file: ScenarioFile =
        serde_json::from_value(value).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    file.validate()?;
    Ok(file)
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".json")))),*]
    };
}

/// Bundled scenarios as `(name, json)`.
pub const BUNDLED: &[(&str, &str)] = bundled!(
    "baseline",
    "shoot_through",
    "overcurrent",
    "overvoltage",
    "thermal_overload",
    "phase_open",
    "sensor_spoof",
    "gate_injection",
    "discharge_hybrid",
    "discharge_passive",
);

/// The four fault classes compared by protection efficiency, in reference order.
pub const FOUR_CLASS_SUITE: [&str; 4] = [
    "shoot_through",
    "overvoltage",
    "thermal_overload",
    "overcurrent",
];

pub const BUNDLED_SWEEP: &str = include_str!("../scenarios/sweep_isolation.json");

pub fn bundled(name: &str) -> Option<ScenarioFile> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text).expect("bundled scenarios are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_parse() {
        for (name, _) in BUNDLED {
            let s = bundled(name).unwrap();
            assert_eq!(&s.name, name);
        }
    }

    #[test]
    fn version_checked() {
        let err = parse_scenario(r#"{"schema_version": 9}"#).unwrap_err();
        assert_eq!(err, ScenarioError::Schema { found: 9 });
        assert!(matches!(parse_scenario("{}"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_scenario(r#"{"schema_version": 1, "fautls": []}"#).unwrap_err();
        assert!(err.to_string().contains("fautls"), "{err}");
    }

    #[test]
    fn leg_out_of_range_message() {
        let text = r#"{"schema_version": 1, "faults": [
            {"kind": {"type": "SwitchShortCircuit", "leg": 9, "which": "Low"}, "t_start": 0.1}]}"#;
        let err = parse_scenario(text).unwrap_err();
        assert!(err.to_string().contains("leg out of range"), "{err}");
    }

    #[test]
    fn defaults_echo_round_trip() {
        let s = parse_scenario(r#"{"schema_version": 1}"#).unwrap();
        let echoed = serde_json::to_string(&s).unwrap();
        let again: ScenarioFile = serde_json::from_str(&echoed).unwrap();
        assert_eq!(again, s);
        assert!(echoed.contains("\"dt_electrical\""));
    }
}
