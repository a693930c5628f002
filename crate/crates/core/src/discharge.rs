//! Hybrid DC-link discharge: an always-on bleed resistor plus an active branch
//! switched by a bang-bang limiter on the discharge-resistor temperature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::CircuitParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DischargeConfig {
    /// Active branch resistance (Ω).
    pub r_active: f64,
    pub v_safe: f64,
    /// Target time to reach `v_safe`; reported against, not enforced.
    pub t_target: f64,
    /// Hysteresis below the resistor limit before the branch re-engages (°C).
    pub hysteresis: f64,
    /// False leaves only the passive bleed.
    pub active_enabled: bool,
}

impl Default for DischargeConfig {
    fn default() -> Self {
        Self {
            r_active: 50.0,
            v_safe: 60.0,
            t_target: 5.0,
            hysteresis: 10.0,
            active_enabled: true,
        }
    }
}

pub fn passive_discharge_tau(p: &CircuitParams) -> f64 {
    p.r_bleed * p.c_dc
}

/// Bang-bang decision for the active branch.
pub fn active_discharge_command(
    v_dc: f64,
    t_res: f64,
    cfg: &DischargeConfig,
    t_limit_res: f64,
    prev_cmd: bool,
) -> bool {
    if !cfg.active_enabled || v_dc <= cfg.v_safe || t_res >= t_limit_res {
        return false;
    }
    if prev_cmd {
        true
    } else {
        t_res <= t_limit_res - cfg.hysteresis
    }
}

/// One supervisory-rate sample of the discharge process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DischargeSample {
    pub t: f64,
    pub v_dc: f64,
    pub t_res: f64,
    /// Energy dissipated in bleed + active branch since the previous sample.
    pub e_dissipated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DischargeMetrics {
    pub t_start: f64,
    pub t_discharge: f64,
    pub e_dissipated: f64,
    pub peak_t_res: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DischargeError {
    #[error("DC link never reached {v_safe} V within the simulated horizon")]
    NeverReachedSafe { v_safe: f64 },
    #[error("trace contains no discharge interval")]
    NoDischarge,
}

/// Discharge time, dissipated energy and peak resistor temperature over the
/// samples from `t_start` on.
///
/// The crossing time is interpolated linearly between samples; `v_start` is
/// the DC-link voltage at `t_start`.
pub fn discharge_metrics(
    t_start: f64,
    v_start: f64,
    samples: &[DischargeSample],
    v_safe: f64,
) -> Result<DischargeMetrics, DischargeError> {
    let mut e = 0.0;
    let mut peak = f64::NEG_INFINITY;
    let mut crossing = (v_start <= v_safe).then_some(t_start);
    let (mut t_prev, mut v_prev) = (t_start, v_start);
    for s in samples.iter().filter(|s| s.t > t_start) {
        e += s.e_dissipated;
        peak = peak.max(s.t_res);
        if crossing.is_none() && s.v_dc <= v_safe {
            let frac = if v_prev > s.v_dc {
                (v_prev - v_safe) / (v_prev - s.v_dc)
            } else {
                1.0
            };
            crossing = Some(t_prev + frac * (s.t - t_prev));
        }
        t_prev = s.t;
        v_prev = s.v_dc;
    }
    let t_cross = crossing.ok_or(DischargeError::NeverReachedSafe { v_safe })?;
    Ok(DischargeMetrics {
        t_start,
        t_discharge: t_cross - t_start,
        e_dissipated: e,
        peak_t_res: peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn passive_tau() {
        let p = CircuitParams::default();
        assert_relative_eq!(passive_discharge_tau(&p), 5.0, max_relative = 1e-12);
        let doubled = CircuitParams {
            c_dc: 2.0 * p.c_dc,
            ..p.clone()
        };
        assert_relative_eq!(
            passive_discharge_tau(&doubled),
            2.0 * passive_discharge_tau(&p),
            max_relative = 1e-12
        );
    }

    #[test]
    fn bang_bang_rules() {
        let cfg = DischargeConfig::default();
        assert!(active_discharge_command(400.0, 25.0, &cfg, 120.0, false));
        assert!(!active_discharge_command(400.0, 120.0, &cfg, 120.0, true));
        // hysteresis band: stays off until 110 °C
        assert!(!active_discharge_command(400.0, 115.0, &cfg, 120.0, false));
        assert!(active_discharge_command(400.0, 115.0, &cfg, 120.0, true));
        assert!(active_discharge_command(400.0, 110.0, &cfg, 120.0, false));
        assert!(!active_discharge_command(60.0, 25.0, &cfg, 120.0, true));
        let passive = DischargeConfig {
            active_enabled: false,
            ..cfg
        };
        assert!(!active_discharge_command(
            400.0, 25.0, &passive, 120.0, false
        ));
    }

    #[test]
    fn below_safe_at_start() {
        let m = discharge_metrics(0.1, 50.0, &[], 60.0).unwrap();
        assert_eq!(m.t_discharge, 0.0);
    }

    #[test]
    fn never_reached() {
        let s = [DischargeSample {
            t: 0.2,
            v_dc: 300.0,
            t_res: 30.0,
            e_dissipated: 1.0,
        }];
        assert!(matches!(
            discharge_metrics(0.1, 400.0, &s, 60.0),
            Err(DischargeError::NeverReachedSafe { .. })
        ));
    }

    #[test]
    fn interpolated_crossing() {
        let s = [
            DischargeSample {
                t: 1.0,
                v_dc: 100.0,
                t_res: 40.0,
                e_dissipated: 2.0,
            },
            DischargeSample {
                t: 2.0,
                v_dc: 40.0,
                t_res: 35.0,
                e_dissipated: 1.0,
            },
        ];
        let m = discharge_metrics(0.0, 400.0, &s, 60.0).unwrap();
        assert_relative_eq!(m.t_discharge, 1.0 + 40.0 / 60.0, max_relative = 1e-12);
        assert_eq!(m.e_dissipated, 3.0);
        assert_eq!(m.peak_t_res, 40.0);
    }
}
