//! Run configuration shared by the engine, the scenario loader and the sweep driver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::CircuitParams;
use crate::detection::{ScDetectorConfig, SupervisoryConfig};
use crate::discharge::DischargeConfig;
use crate::protection::ProtectionConfig;
use crate::thermal::ThermalParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub sigma_v: f64,
    pub sigma_i: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sigma_v: 2.0,
            sigma_i: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub dt_electrical: f64,
    pub dt_thermal: f64,
    pub dt_supervisory: f64,
    pub t_end: f64,
    pub seed: u64,
    pub noise: NoiseConfig,
    /// Spacing of decimated trace rows.
    pub trace_stride: f64,
    /// Half-width of the full-resolution window recorded around each fault start.
    pub event_window: f64,
    /// Initial DC-link voltage; defaults to the source voltage.
    pub initial_v_dc: Option<f64>,
    /// Start the phase currents on their analytic periodic steady state
    /// instead of at rest.
    pub start_in_steady_state: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dt_electrical: 0.5e-6,
            dt_thermal: 100e-6,
            dt_supervisory: 100e-6,
            t_end: 0.5,
            seed: 0,
            noise: NoiseConfig::default(),
            trace_stride: 100e-6,
            event_window: 1e-3,
            initial_v_dc: None,
            start_in_steady_state: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub power_threshold_fraction: f64,
    /// Initial interval excluded from availability.
    pub t_settle: f64,
    /// Weights of the detection, availability and thermal terms.
    pub weights: [f64; 3],
    pub t_detect_max: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            power_threshold_fraction: 0.6,
            t_settle: 20e-3,
            weights: [0.4, 0.4, 0.2],
            t_detect_max: 0.25,
        }
    }
}

/// Every tunable of a run, fully resolved.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub engine: EngineConfig,
    pub circuit: CircuitParams,
    pub thermal: ThermalParams,
    pub detector: ScDetectorConfig,
    pub supervisory: SupervisoryConfig,
    pub protection: ProtectionConfig,
    pub discharge: DischargeConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// `ratio` as an integer when it is one to within rounding.
pub(crate) fn integer_ratio(num: f64, den: f64) -> Option<u64> {
    let r = num / den;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() < 1e-6 * n.max(1.0)).then_some(n as u64)
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        if !(e.dt_electrical > 0.0) {
            return Err(ConfigError::new("engine.dt_electrical", "must be positive"));
        }
        if !(e.t_end > 0.0 && e.t_end.is_finite()) {
            return Err(ConfigError::new("engine.t_end", "must be positive"));
        }
        for (field, v) in [
            ("engine.dt_thermal", e.dt_thermal),
            ("engine.dt_supervisory", e.dt_supervisory),
            ("engine.trace_stride", e.trace_stride),
        ] {
            if integer_ratio(v, e.dt_electrical).is_none() {
                return Err(ConfigError::new(
                    field,
                    "must be an integer multiple of dt_electrical",
                ));
            }
        }
        if integer_ratio(1.0 / self.detector.sample_rate, e.dt_electrical).is_none() {
            return Err(ConfigError::new(
                "detector.sample_rate",
                "sample period must be an integer multiple of dt_electrical",
            ));
        }
        if !(e.event_window >= 0.0) {
            return Err(ConfigError::new(
                "engine.event_window",
                "must be non-negative",
            ));
        }
        if e.noise.enabled && !(e.noise.sigma_v >= 0.0 && e.noise.sigma_i >= 0.0) {
            return Err(ConfigError::new(
                "engine.noise",
                "sigmas must be non-negative",
            ));
        }
        if let Some(v) = e.initial_v_dc {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(
                    "engine.initial_v_dc",
                    "must be non-negative",
                ));
            }
        }
        self.circuit
            .validate()
            .map_err(|err| ConfigError::new("circuit", err.to_string()))?;
        self.thermal
            .validate()
            .map_err(|err| ConfigError::new("thermal", err.to_string()))?;
        let dt_th = e.dt_thermal;
        for (name, node) in [
            ("switch", self.thermal.switch()),
            ("resistor", self.thermal.resistor()),
        ] {
            if dt_th > 0.1 * node.tau() {
                return Err(ConfigError::new(
                    "engine.dt_thermal",
                    format!(
                        "exceeds 0.1·τ of the {name} thermal node ({} s)",
                        node.tau()
                    ),
                ));
            }
        }
        self.detector
            .validate()
            .map_err(|err| ConfigError::new("detector", err.to_string()))?;
        let s = &self.supervisory;
        for (field, v) in [
            ("supervisory.overcurrent_window", s.overcurrent_window),
            ("supervisory.overvoltage_window", s.overvoltage_window),
            ("supervisory.short_circuit_window", s.short_circuit_window),
            ("supervisory.phase_loss_window", s.phase_loss_window),
            ("supervisory.overcurrent_factor", s.overcurrent_factor),
            ("supervisory.overvoltage_factor", s.overvoltage_factor),
            ("supervisory.short_circuit_current", s.short_circuit_current),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::new(field, "must be positive"));
            }
        }
        let d = &self.discharge;
        if !(d.r_active > 0.0) {
            return Err(ConfigError::new("discharge.r_active", "must be positive"));
        }
        if !(d.v_safe >= 0.0 && d.v_safe < self.circuit.v_source) {
            return Err(ConfigError::new(
                "discharge.v_safe",
                "must lie below the source voltage",
            ));
        }
        let m = &self.metrics;
        if !(0.0..=1.0).contains(&m.power_threshold_fraction) {
            return Err(ConfigError::new(
                "metrics.power_threshold_fraction",
                "must lie in [0, 1]",
            ));
        }
        if m.weights.iter().any(|w| *w < 0.0) || (m.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(ConfigError::new(
                "metrics.weights",
                "must be non-negative and sum to 1",
            ));
        }
        if !(m.t_detect_max > 0.0) {
            return Err(ConfigError::new("metrics.t_detect_max", "must be positive"));
        }
        let p = &self.protection;
        if !(p.recovery_holdoff >= 0.0) {
            return Err(ConfigError::new(
                "protection.recovery_holdoff",
                "must be non-negative",
            ));
        }
        let sched = &p.schedule;
        if !(sched.t0_delay > 0.0 && sched.t_final_delay > 0.0 && sched.t_final > 0.0) {
            return Err(ConfigError::new(
                "protection.schedule",
                "delays must be positive",
            ));
        }
        Ok(())
    }
}
