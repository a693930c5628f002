//! Evaluation metrics computed from a finished trace.
//!
//! The protection-efficiency score is a weighted sum of a detection term, the
//! availability and a thermal-stress term:
//!
//! `score = w1·(1 − t_detect_sup / t_detect_max) + w2·availability + w3·(1 − overshoot / headroom)`
//!
//! clamped to [0, 1], with `overshoot` the rise of the hottest in-service junction above its
//! value at fault start and `headroom` the margin to the switch limit at fault
//! start. An undetected fault contributes nothing to the detection term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{MetricsConfig, SimConfig};
use crate::detection::{match_detection, FaultClass};
use crate::discharge::{discharge_metrics, DischargeMetrics, DischargeSample};
use crate::engine::{energy_audit, Trace};
use crate::protection::StateKind;

pub const EFFICIENCY_FORMULA: &str = "score = w1*(1 - t_detect_sup/t_detect_max) + w2*availability + w3*(1 - overshoot/headroom), clamped to [0,1]; overshoot = peak junction temperature of in-service switches after fault start minus its value at fault start; headroom = t_limit_switch minus that junction temperature at fault start; switches on legs clamped by protection are excluded; undetected faults contribute 0 to the detection term";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no fault of class {0} in this run")]
    MissingMetrics(FaultClass),
    #[error("faults[{0}] was never isolated")]
    NotIsolated(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultMetrics {
    pub index: usize,
    pub label: String,
    /// Class expected to catch the fault; `None` for attack-style faults with
    /// no fixed class.
    pub class: Option<FaultClass>,
    pub t_start: f64,
    pub detected: bool,
    pub t_detect_fast: Option<f64>,
    pub t_detect_supervisory: Option<f64>,
    pub t_isolate: Option<f64>,
    pub tj_at_start: f64,
    pub tj_peak_after: f64,
    pub thermal_headroom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub faults: Vec<FaultMetrics>,
    pub t_discharge: Option<f64>,
    pub e_dissipated: Option<f64>,
    pub discharge: Option<DischargeMetrics>,
    /// Why discharge metrics are missing, when a discharge did start.
    pub discharge_error: Option<String>,
    pub peak_thermal: f64,
    pub peak_t_res: f64,
    pub availability: f64,
    /// Score for the class of the first classified fault.
    pub efficiency: Option<f64>,
    pub efficiency_class: Option<FaultClass>,
    pub energy_audit_error: f64,
    pub healthy_shoot_through_commands: u64,
    pub isolated_leg_edges: u64,
}

/// Fraction of control ticks after `t_settle` in which the drive is running
/// and delivers at least `fraction` of the nominal back-EMF power, averaged
/// over one fundamental period.
pub fn availability(trace: &Trace, fraction: f64, t_settle: f64, emf_freq: f64) -> f64 {
    let ticks = &trace.ticks;
    if ticks.len() < 2 {
        return 1.0;
    }
    let dt = ticks[1].t - ticks[0].t;
    let period = if emf_freq > 0.0 {
        ((1.0 / emf_freq) / dt).round().max(1.0) as usize
    } else {
        1
    };
    let p_ref = fraction * trace.calibration.p_emf_nominal;
    let mut sum = 0.0;
    let (mut total, mut up) = (0usize, 0usize);
    for (j, tk) in ticks.iter().enumerate() {
        sum += tk.p_emf;
        if j >= period {
            sum -= ticks[j - period].p_emf;
        }
        if tk.t < t_settle {
            continue;
        }
        total += 1;
        let avg = sum / period.min(j + 1) as f64;
        if !tk.state.is_shutdown() && (p_ref <= 0.0 || avg >= p_ref) {
            up += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        up as f64 / total as f64
    }
}

/// Time from the detection that started isolation to entry into `Degraded`,
/// per fault. Faults that never lead to degraded operation yield `NotIsolated`.
pub fn isolation_time(trace: &Trace) -> Vec<Result<f64, MetricsError>> {
    trace
        .faults
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let end = f.t_clear.unwrap_or(f64::INFINITY);
            let start = trace.transitions.iter().position(|tr| {
                tr.to == StateKind::Isolating
                    && tr.t >= f.t_start
                    && tr.t < end
                    && f.kind.leg().is_none_or(|l| tr.leg == Some(l))
            });
            let Some(s) = start else {
                return Err(MetricsError::NotIsolated(i));
            };
            let t0 = trace.transitions[s].t;
            trace
                .transitions
                .get(s + 1)
                .filter(|tr| tr.to == StateKind::Degraded)
                .map(|tr| tr.t - t0)
                .ok_or(MetricsError::NotIsolated(i))
        })
        .collect()
}

/// Protection-efficiency score of the first fault of `class`.
pub fn efficiency_score(
    m: &MetricsReport,
    class: FaultClass,
    weights: &MetricsConfig,
) -> Result<f64, MetricsError> {
    let f = m
        .faults
        .iter()
        .find(|f| f.class == Some(class))
        .ok_or(MetricsError::MissingMetrics(class))?;
    Ok(score_terms(
        f.t_detect_supervisory,
        m.availability,
        f.tj_peak_after - f.tj_at_start,
        f.thermal_headroom,
        weights,
    ))
}

/// Score from its component metrics.
pub fn score_terms(
    t_detect: Option<f64>,
    availability: f64,
    overshoot: f64,
    headroom: f64,
    w: &MetricsConfig,
) -> f64 {
    let detect = t_detect.map_or(0.0, |t| 1.0 - (t / w.t_detect_max).min(1.0));
    let thermal = if headroom > 0.0 {
        1.0 - overshoot.max(0.0) / headroom
    } else {
        0.0
    };
    (w.weights[0] * detect + w.weights[1] * availability + w.weights[2] * thermal).clamp(0.0, 1.0)
}

fn tj_at(trace: &Trace, t: f64) -> f64 {
    trace
        .ticks
        .iter()
        .take_while(|tk| tk.t <= t)
        .last()
        .or(trace.ticks.first())
        .map_or(f64::NAN, |tk| tk.tj_in_service)
}

pub fn compute_metrics(trace: &Trace, cfg: &SimConfig) -> MetricsReport {
    let isolation = isolation_time(trace);
    let faults: Vec<FaultMetrics> = trace
        .faults
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let class = f.kind.expected_class();
            let fast = match_detection(f, &trace.detections, |d| d.detector.is_fast());
            let sup = match_detection(f, &trace.detections, |d| !d.detector.is_fast());
            let fast = fast.filter(|_| class.is_none_or(|c| c == FaultClass::ShortCircuit));
            let tj0 = tj_at(trace, f.t_start);
            let peak = trace
                .ticks
                .iter()
                .filter(|tk| tk.t >= f.t_start)
                .map(|tk| tk.tj_in_service)
                .fold(tj0, f64::max);
            FaultMetrics {
                index: i,
                label: f.kind.label().to_string(),
                class,
                t_start: f.t_start,
                detected: fast.is_some() || sup.is_some(),
                t_detect_fast: fast.map(|d| d.t_trip - f.t_start),
                t_detect_supervisory: sup.map(|d| d.t_trip - f.t_start),
                t_isolate: isolation[i].as_ref().ok().copied(),
                tj_at_start: tj0,
                tj_peak_after: peak,
                thermal_headroom: cfg.thermal.t_limit_switch - tj0,
            }
        })
        .collect();

    let (discharge, discharge_error) = match trace
        .transitions
        .iter()
        .find(|t| t.to == StateKind::Discharging)
    {
        None => (None, None),
        Some(tr) => {
            let v_start = trace
                .ticks
                .iter()
                .find(|tk| tk.t >= tr.t)
                .map_or(trace.final_state.v_dc, |tk| tk.v_dc);
            let samples: Vec<DischargeSample> = trace
                .ticks
                .iter()
                .map(|tk| DischargeSample {
                    t: tk.t,
                    v_dc: tk.v_dc,
                    t_res: tk.t_res,
                    e_dissipated: tk.e_discharge,
                })
                .collect();
            match discharge_metrics(tr.t, v_start, &samples, cfg.discharge.v_safe) {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e.to_string())),
            }
        }
    };

    let availability = availability(
        trace,
        cfg.metrics.power_threshold_fraction,
        cfg.metrics.t_settle,
        cfg.circuit.emf_freq,
    );
    let mut report = MetricsReport {
        faults,
        t_discharge: discharge.as_ref().map(|d| d.t_discharge),
        e_dissipated: discharge.as_ref().map(|d| d.e_dissipated),
        discharge,
        discharge_error,
        peak_thermal: trace
            .ticks
            .iter()
            .map(|t| t.tj_max)
            .fold(f64::NEG_INFINITY, f64::max),
        peak_t_res: trace
            .ticks
            .iter()
            .map(|t| t.t_res)
            .fold(f64::NEG_INFINITY, f64::max),
        availability,
        efficiency: None,
        efficiency_class: None,
        energy_audit_error: energy_audit(&trace.audit),
        healthy_shoot_through_commands: trace.healthy_shoot_through_commands,
        isolated_leg_edges: trace.isolated_leg_edges,
    };
    if let Some(class) = report.faults.iter().find_map(|f| f.class) {
        report.efficiency_class = Some(class);
        report.efficiency = efficiency_score(&report, class, &cfg.metrics).ok();
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w() -> MetricsConfig {
        MetricsConfig::default()
    }

    #[test]
    fn perfect_run_scores_one() {
        assert!((score_terms(Some(0.0), 1.0, 0.0, 100.0, &w()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undetected_at_most_point_six() {
        assert!(score_terms(None, 1.0, 0.0, 100.0, &w()) <= 0.6 + 1e-12);
    }

    #[test]
    fn missing_class() {
        let m = MetricsReport {
            faults: vec![],
            t_discharge: None,
            e_dissipated: None,
            discharge: None,
            discharge_error: None,
            peak_thermal: 25.0,
            peak_t_res: 25.0,
            availability: 1.0,
            efficiency: None,
            efficiency_class: None,
            energy_audit_error: 0.0,
            healthy_shoot_through_commands: 0,
            isolated_leg_edges: 0,
        };
        assert_eq!(
            efficiency_score(&m, FaultClass::Thermal, &w()),
            Err(MetricsError::MissingMetrics(FaultClass::Thermal))
        );
    }

    proptest! {
        #[test]
        fn score_is_monotone(
            t in 0.0f64..0.5, dt in 0.0f64..0.2,
            a in 0.0f64..1.0, da in 0.0f64..0.5,
            o in 0.0f64..200.0, d_o in 0.0f64..50.0,
            h in 1.0f64..150.0,
        ) {
            let base = score_terms(Some(t + dt), a, o + d_o, h, &w());
            prop_assert!(score_terms(Some(t), a, o + d_o, h, &w()) >= base);
            prop_assert!(score_terms(Some(t + dt), (a + da).min(1.0), o + d_o, h, &w()) >= base);
            prop_assert!(score_terms(Some(t + dt), a, o, h, &w()) >= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
