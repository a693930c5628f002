//! Serialized run outputs: the CSV trace and the JSON summary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{DetectorId, FaultClass};
use crate::engine::{Calibration, RunOutput, Trace};
use crate::metrics::{MetricsReport, EFFICIENCY_FORMULA};
use crate::protection::Transition;
use crate::scenario::{ScenarioFile, SCHEMA_VERSION};

pub fn trace_header(n_phases: usize) -> String {
    let mut h = String::from("t_s,v_dc_V");
    for k in 0..n_phases {
        let _ = write!(h, ",i{k}_A");
    }
    h.push_str(",tj_max_C,t_res_C,fsm_state,det_flags");
    h
}

pub fn trace_csv(trace: &Trace) -> String {
    let mut out = trace_header(trace.n_phases);
    out.push('\n');
    for r in &trace.rows {
        let _ = write!(out, "{},{}", r.t, r.v_dc);
        for i in &r.i_phase {
            let _ = write!(out, ",{i}");
        }
        let _ = writeln!(out, ",{},{},{},{}", r.tj_max, r.t_res, r.state, r.det_flags);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub class: FaultClass,
    pub detector: DetectorId,
    pub t_trip: f64,
    pub leg: Option<usize>,
    /// Fault this detection was attributed to.
    pub fault_index: Option<usize>,
    pub latency_s: Option<f64>,
}

/// Decimated series used by the plots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub v_dc: Vec<f64>,
    pub v_dc_meas: Vec<f64>,
    pub e_cap: Vec<f64>,
    pub tj_max: Vec<f64>,
    pub t_res: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub efficiency_formula: String,
    /// Fully resolved scenario, defaults expanded.
    pub scenario: ScenarioFile,
    pub calibration: Calibration,
    pub detections: Vec<DetectionRecord>,
    pub transitions: Vec<Transition>,
    pub metrics: MetricsReport,
    pub energy_audit_error: f64,
    pub series: Series,
}

fn attribute(trace: &Trace, class: FaultClass, detector: DetectorId, t: f64) -> Option<usize> {
    trace
        .faults
        .iter()
        .enumerate()
        .filter(|(_, f)| f.t_start <= t)
        .filter(|(_, f)| match f.kind.expected_class() {
            Some(c) => c == class,
            None => true,
        })
        .filter(|(_, f)| {
            !detector.is_fast()
                || f.kind
                    .expected_class()
                    .is_none_or(|c| c == FaultClass::ShortCircuit)
        })
        .max_by(|a, b| a.1.t_start.total_cmp(&b.1.t_start))
        .map(|(i, _)| i)
}

pub fn build_summary(file: &ScenarioFile, out: &RunOutput) -> Summary {
    let trace = &out.trace;
    let detections = trace
        .detections
        .iter()
        .map(|d| {
            let idx = attribute(trace, d.class, d.detector, d.t_trip);
            DetectionRecord {
                class: d.class,
                detector: d.detector,
                t_trip: d.t_trip,
                leg: d.leg,
                fault_index: idx,
                latency_s: idx.map(|i| d.t_trip - trace.faults[i].t_start),
            }
        })
        .collect();

    let c = file.config.circuit.c_dc;
    let stride = file.output.series_stride;
    let mut series = Series::default();
    let mut next = f64::NEG_INFINITY;
    for tk in &trace.ticks {
        if tk.t + 1e-12 < next {
            continue;
        }
        next = tk.t + stride;
        series.t.push(tk.t);
        series.v_dc.push(tk.v_dc);
        series.v_dc_meas.push(tk.v_dc_meas);
        series.e_cap.push(0.5 * c * tk.v_dc * tk.v_dc);
        series.tj_max.push(tk.tj_max);
        series.t_res.push(tk.t_res);
    }

    Summary {
        schema_version: SCHEMA_VERSION,
        name: file.name.clone(),
        efficiency_formula: EFFICIENCY_FORMULA.to_string(),
        scenario: file.clone(),
        calibration: trace.calibration,
        detections,
        transitions: trace.transitions.clone(),
        metrics: out.metrics.clone(),
        energy_audit_error: out.metrics.energy_audit_error,
        series,
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, file: &ScenarioFile, out: &RunOutput) -> io::Result<Summary> {
    fs::create_dir_all(dir)?;
    let summary = build_summary(file, out);
    write_atomic(&dir.join("trace.csv"), trace_csv(&out.trace).as_bytes())?;
    write_atomic(&dir.join("summary.json"), summary_json(&summary).as_bytes())?;
    Ok(summary)
}
