use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn phaseguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaseguard"))
        .args(args)
        .output()
        .expect("spawn phaseguard")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn baseline_runs_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = phaseguard(&["run", "baseline", "-o", arg(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let s = summary(&out);
    assert_eq!(s["metrics"]["availability"].as_f64(), Some(1.0));
    assert!(out.join("trace.csv").exists());
}

#[test]
fn shoot_through_is_caught_by_the_fast_detector() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = phaseguard(&["run", "shoot_through", "-o", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let f = &summary(&out)["metrics"]["faults"][0];
    let latency = f["t_detect_fast"].as_f64().unwrap();
    assert!(latency <= 5.8e-6, "latency {latency}");
}

#[test]
fn out_of_range_leg_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("bad.json");
    fs::write(
        &scen,
        r#"{"schema_version":1,"faults":[{"kind":{"type":"PhaseOpen","leg":9},"t_start":0.1}]}"#,
    )
    .unwrap();
    let o = phaseguard(&["run", arg(&scen), "-o", arg(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("leg out of range"), "{}", stderr(&o));
}

#[test]
fn malformed_json_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = tmp.path().join("bad.json");
    fs::write(&scen, "{ not json").unwrap();
    let o = phaseguard(&["run", arg(&scen), "-o", arg(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

const BASE: &str = r#"{"schema_version":1,"config":{"engine":{"t_end":0.02,"seed":0},"circuit":{"r_load":5.0}},"faults":[]}"#;

#[test]
fn empty_sweep_grid_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = tmp.path().join("sweep.json");
    fs::write(
        &sweep,
        format!(r#"{{"schema_version":1,"base":{BASE},"axes":[{{"path":"/config/engine/seed","values":[]}}]}}"#),
    )
    .unwrap();
    let o = phaseguard(&["sweep", arg(&sweep), "-o", arg(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn three_by_three_sweep_writes_nine_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = tmp.path().join("sweep.json");
    fs::write(
        &sweep,
        format!(
            r#"{{"schema_version":1,"base":{BASE},"axes":[
                {{"path":"/config/engine/seed","values":[1,2,3]}},
                {{"path":"/config/circuit/r_load","values":[4.0,5.0,6.0]}}]}}"#
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = phaseguard(&["sweep", arg(&sweep), "-o", arg(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10, "{csv}");
    let ids: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

fn suite_figures(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn suite_figures_are_complete_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let o = phaseguard(&["suite", "-o", arg(&a), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let figs = suite_figures(&a.join("plots"));
    let names: Vec<&str> = figs.iter().map(|f| f.0.as_str()).collect();
    for want in [
        "detection_times.svg",
        "discharge.svg",
        "efficiency.svg",
        "isolation_time.svg",
        "measurement_overlay.svg",
    ] {
        assert!(names.contains(&want), "missing {want}: {names:?}");
    }

    // Replotting from the summaries alone gives the same bytes.
    let b = tmp.path().join("b");
    let o = phaseguard(&["plot", arg(&a), "-o", arg(&b), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(figs, suite_figures(&b));
}

#[test]
fn plot_reads_only_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let o = phaseguard(&["run", "discharge_hybrid", "-o", arg(&run), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    fs::remove_file(run.join("trace.csv")).unwrap();
    let plots = tmp.path().join("plots");
    let o = phaseguard(&["plot", arg(&run.join("summary.json")), "-o", arg(&plots)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(plots.join("discharge.svg").exists());

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = phaseguard(&["plot", arg(&empty), "-o", arg(&plots)]);
    assert_eq!(o.status.code(), Some(2));
}
