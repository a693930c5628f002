//! Parameter sweeps over one or two scenario fields.
//!
//! Cells are independent runs. With the `parallel` feature they are spread
//! over a rayon pool (capped by `PHASEGUARD_THREADS`); without it they run
//! one after another. Results always come back in cell order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{run_scenario, EngineError, RunOutput};
use crate::scenario::{scenario_from_value, ScenarioError, ScenarioFile, SCHEMA_VERSION};

pub const THREADS_ENV: &str = "PHASEGUARD_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// JSON pointer into the base scenario, e.g. `/faults/0/t_start`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Scenario document every cell starts from.
    pub base: Value,
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub id: String,
    pub params: Vec<(String, Value)>,
    pub scenario: ScenarioFile,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("malformed sweep: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("at most two sweep axes are supported (got {0})")]
    TooManyAxes(usize),
    #[error("sweep path {0} does not exist in the base scenario")]
    Pointer(String),
    #[error("{id}: {err}")]
    Cell { id: String, err: ScenarioError },
}

pub fn parse_sweep(text: &str) -> Result<SweepFile, SweepError> {
    let sweep: SweepFile =
        serde_json::from_str(text).map_err(|e| SweepError::Parse(e.to_string()))?;
    if sweep.schema_version != SCHEMA_VERSION {
        return Err(SweepError::Schema(sweep.schema_version));
    }
    Ok(sweep)
}

/// Cartesian product of the axes, first axis slowest. Cell ids are
/// `cell_000`, `cell_001`, ... in that order.
pub fn expand(sweep: &SweepFile) -> Result<Vec<SweepCell>, SweepError> {
    if sweep.axes.is_empty() || sweep.axes.iter().any(|a| a.values.is_empty()) {
        return Err(SweepError::EmptyGrid);
    }
    if sweep.axes.len() > 2 {
        return Err(SweepError::TooManyAxes(sweep.axes.len()));
    }
    for a in &sweep.axes {
        if sweep.base.pointer(&a.path).is_none() {
            return Err(SweepError::Pointer(a.path.clone()));
        }
    }
    let mut combos: Vec<Vec<(String, Value)>> = vec![vec![]];
    for a in &sweep.axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                a.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((a.path.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .enumerate()
        .map(|(i, params)| {
            let id = format!("cell_{i:03}");
            let mut doc = sweep.base.clone();
            for (path, v) in &params {
                *doc.pointer_mut(path)
                    .ok_or_else(|| SweepError::Pointer(path.clone()))? = v.clone();
            }
            let mut scenario = scenario_from_value(doc).map_err(|err| SweepError::Cell {
                id: id.clone(),
                err,
            })?;
            if scenario.name.is_empty() {
                scenario.name = id.clone();
            } else {
                scenario.name = format!("{}/{id}", scenario.name);
            }
            Ok(SweepCell {
                id,
                params,
                scenario,
            })
        })
        .collect()
}

/// `PHASEGUARD_THREADS` as a positive integer, if set.
pub fn thread_limit_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
}

pub fn map_sequential<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T, R>(
    items: &[T],
    threads: Option<usize>,
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    use rayon::prelude::*;
    let run = || items.par_iter().map(&f).collect();
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

/// Maps `f` over the cells, in parallel when the feature is enabled.
pub fn map_cells<T, R>(
    items: &[T],
    threads: Option<usize>,
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads != Some(1) {
            return map_parallel(items, threads, f);
        }
    }
    let _ = threads;
    map_sequential(items, f)
}

pub fn run_cell(cell: &SweepCell) -> Result<RunOutput, EngineError> {
    run_scenario(&cell.scenario.scenario())
}

/// One line of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub id: String,
    pub params: Vec<Value>,
    pub status: String,
    pub availability: Option<f64>,
    pub t_detect_fast_s: Option<f64>,
    pub t_detect_sup_s: Option<f64>,
    pub t_isolate_s: Option<f64>,
    pub efficiency: Option<f64>,
    pub audit_error: Option<f64>,
    pub t_discharge_s: Option<f64>,
}

impl SweepRow {
    pub fn from_result(cell: &SweepCell, res: &Result<RunOutput, EngineError>) -> Self {
        let params = cell.params.iter().map(|(_, v)| v.clone()).collect();
        match res {
            Ok(out) => {
                let m = &out.metrics;
                let f = m.faults.first();
                Self {
                    id: cell.id.clone(),
                    params,
                    status: "ok".into(),
                    availability: Some(m.availability),
                    t_detect_fast_s: f.and_then(|f| f.t_detect_fast),
                    t_detect_sup_s: f.and_then(|f| f.t_detect_supervisory),
                    t_isolate_s: f.and_then(|f| f.t_isolate),
                    efficiency: m.efficiency,
                    audit_error: Some(m.energy_audit_error),
                    t_discharge_s: m.t_discharge,
                }
            }
            Err(e) => Self {
                id: cell.id.clone(),
                params,
                status: match e {
                    EngineError::NumericalDivergence { .. } => "diverged".into(),
                    _ => "error".into(),
                },
                availability: None,
                t_detect_fast_s: None,
                t_detect_sup_s: None,
                t_isolate_s: None,
                efficiency: None,
                audit_error: None,
                t_discharge_s: None,
            },
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Aggregate CSV, one row per cell sorted by id.
pub fn aggregate_csv(axes: &[SweepAxis], rows: &[SweepRow]) -> String {
    let mut out = String::from("id");
    for a in axes {
        out.push(',');
        out.push_str(&csv_field(&Value::String(a.path.clone())));
    }
    out.push_str(",status,availability,t_detect_fast_s,t_detect_sup_s,t_isolate_s,efficiency,audit_error,t_discharge_s\n");
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for r in sorted {
        out.push_str(&r.id);
        for p in &r.params {
            out.push(',');
            out.push_str(&csv_field(p));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{},{},{}",
            r.status,
            opt(r.availability),
            opt(r.t_detect_fast_s),
            opt(r.t_detect_sup_s),
            opt(r.t_isolate_s),
            opt(r.efficiency),
            opt(r.audit_error),
            opt(r.t_discharge_s)
        );
    }
    out
}
