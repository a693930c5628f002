//! The five standard figures, built from run summaries alone.

use phaseguard::detection::FaultClass;
use phaseguard::protection::isolation_delay;
use phaseguard::report::Summary;

use crate::svg::{Axis, BarChart, LineChart, Series, PALETTE};

pub const FIGURES: [&str; 5] = [
    "measurement_overlay.svg",
    "detection_times.svg",
    "isolation_time.svg",
    "discharge.svg",
    "efficiency.svg",
];

const LATENCY_CLASSES: [FaultClass; 4] = [
    FaultClass::ShortCircuit,
    FaultClass::Overcurrent,
    FaultClass::Overvoltage,
    FaultClass::Thermal,
];

const EFFICIENCY_CLASSES: [FaultClass; 4] = [
    FaultClass::ShortCircuit,
    FaultClass::Overvoltage,
    FaultClass::Thermal,
    FaultClass::Overcurrent,
];

fn zip(t: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    t.iter().copied().zip(y.iter().copied()).collect()
}

fn measurement_overlay(summaries: &[Summary]) -> Option<String> {
    let s = summaries
        .iter()
        .find(|s| s.scenario.config.engine.noise.enabled)
        .or(summaries.first())?;
    if s.series.t.is_empty() {
        return None;
    }
    let values = s.series.v_dc.iter().chain(&s.series.v_dc_meas).copied();
    Some(
        LineChart {
            title: format!("DC-link voltage, simulated vs measured ({})", s.name),
            x: Axis::fit("time (s)", s.series.t.iter().copied()),
            y: Axis::fit("v_dc (V)", values),
            y2: None,
            series: vec![
                Series::line(
                    "measured",
                    zip(&s.series.t, &s.series.v_dc_meas),
                    PALETTE[1],
                ),
                Series::line("simulated", zip(&s.series.t, &s.series.v_dc), PALETTE[0]),
            ],
        }
        .render(),
    )
}

fn first_fault(
    summaries: &[Summary],
    class: FaultClass,
) -> Option<&phaseguard::metrics::FaultMetrics> {
    summaries
        .iter()
        .flat_map(|s| s.metrics.faults.iter())
        .find(|f| f.class == Some(class))
}

fn detection_times(summaries: &[Summary]) -> Option<String> {
    let bars: Vec<(String, f64)> = LATENCY_CLASSES
        .iter()
        .filter_map(|&c| {
            first_fault(summaries, c)
                .and_then(|f| f.t_detect_supervisory)
                .map(|t| (c.to_string(), t))
        })
        .collect();
    if bars.is_empty() {
        return None;
    }
    Some(
        BarChart {
            title: "Supervisory detection time by fault class".into(),
            y_label: "detection time (s)".into(),
            bars,
            y_range: None,
            value_format: |v| format!("{v:.3} s"),
        }
        .render(),
    )
}

fn isolation_time(summaries: &[Summary]) -> Option<String> {
    let mut points: Vec<(f64, f64)> = summaries
        .iter()
        .flat_map(|s| s.metrics.faults.iter())
        .filter_map(|f| f.t_isolate.map(|t| (f.t_start, t * 1e3)))
        .collect();
    if points.is_empty() {
        return None;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let sched = &summaries[0].scenario.config.protection.schedule;
    let t_max = points.iter().map(|p| p.0).fold(sched.t_final, f64::max);
    let curve: Vec<(f64, f64)> = (0..=100)
        .map(|k| {
            let t = t_max * k as f64 / 100.0;
            (t, isolation_delay(t, sched) * 1e3)
        })
        .collect();
    let ys = points.iter().chain(&curve).map(|p| p.1);
    let mut measured = Series::line("measured", points.clone(), PALETTE[1]);
    measured.markers = true;
    let mut schedule = Series::line("schedule", curve.clone(), PALETTE[0]);
    schedule.dashed = true;
    Some(
        LineChart {
            title: "Isolation time vs fault onset".into(),
            x: Axis::fit("fault onset (s)", curve.iter().map(|p| p.0)),
            y: Axis::from_zero("isolation time (ms)", ys),
            y2: None,
            series: vec![schedule, measured],
        }
        .render(),
    )
}

fn discharge(summaries: &[Summary]) -> Option<String> {
    let s = summaries
        .iter()
        .filter(|s| s.metrics.discharge.is_some())
        .max_by_key(|s| s.scenario.config.discharge.active_enabled)?;
    let d = s.metrics.discharge.as_ref()?;
    let end = d.t_start + 1.2 * d.t_discharge;
    let idx: Vec<usize> = (0..s.series.t.len())
        .filter(|&i| s.series.t[i] >= d.t_start && s.series.t[i] <= end)
        .collect();
    if idx.is_empty() {
        return None;
    }
    let energy: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (s.series.t[i], s.series.e_cap[i]))
        .collect();
    let temp: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (s.series.t[i], s.series.t_res[i]))
        .collect();
    let mut t_series = Series::line("resistor temperature", temp.clone(), PALETTE[1]);
    t_series.right_axis = true;
    Some(
        LineChart {
            title: format!(
                "DC-link discharge energy and resistor temperature ({})",
                s.name
            ),
            x: Axis::fit("time (s)", energy.iter().map(|p| p.0)),
            y: Axis::from_zero("stored energy (J)", energy.iter().map(|p| p.1)),
            y2: Some(Axis::fit(
                "resistor temperature (°C)",
                temp.iter().map(|p| p.1),
            )),
            series: vec![Series::line("stored energy", energy, PALETTE[0]), t_series],
        }
        .render(),
    )
}

fn efficiency(summaries: &[Summary]) -> Option<String> {
    let bars: Vec<(String, f64)> = EFFICIENCY_CLASSES
        .iter()
        .filter_map(|&c| {
            summaries
                .iter()
                .find(|s| s.metrics.efficiency_class == Some(c))
                .and_then(|s| s.metrics.efficiency)
                .map(|e| (c.to_string(), e))
        })
        .collect();
    if bars.is_empty() {
        return None;
    }
    Some(
        BarChart {
            title: "Protection efficiency by fault class".into(),
            y_label: "efficiency score".into(),
            bars,
            y_range: Some((0.0, 1.0)),
            value_format: |v| format!("{v:.3}"),
        }
        .render(),
    )
}

type Builder = fn(&[Summary]) -> Option<String>;

/// Every figure the summaries have data for, as `(file name, svg)`.
pub fn figures(summaries: &[Summary]) -> Vec<(&'static str, String)> {
    let builders: [Builder; 5] = [
        measurement_overlay,
        detection_times,
        isolation_time,
        discharge,
        efficiency,
    ];
    FIGURES
        .iter()
        .zip(builders)
        .filter_map(|(name, build)| build(summaries).map(|svg| (*name, svg)))
        .collect()
}
