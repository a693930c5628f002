//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use phaseguard::detection::FaultClass;
use phaseguard::engine::{run_scenario, RunOutput, TickRecord};
use phaseguard::metrics::{efficiency_score, isolation_time};
use phaseguard::protection::{isolation_delay, IsolationSchedule, StateKind};
use phaseguard::report::{build_summary, summary_json, trace_csv};
use phaseguard::scenario::{bundled, ScenarioFile, BUNDLED, BUNDLED_SWEEP, FOUR_CLASS_SUITE};
use phaseguard::sweep::{expand, map_cells, parse_sweep, run_cell};

type Check = Result<String, String>;

fn run(file: &ScenarioFile) -> RunOutput {
    run_scenario(&file.scenario()).unwrap_or_else(|e| panic!("{}: {e}", file.name))
}

fn timed(name: &str) -> (RunOutput, f64) {
    let file = bundled(name).unwrap();
    let t0 = Instant::now();
    let out = run(&file);
    (out, t0.elapsed().as_secs_f64())
}

fn sc_fast_latency() -> Check {
    let (out, secs) = timed("shoot_through");
    let lat = out.metrics.faults[0]
        .t_detect_fast
        .ok_or("fast detector never tripped")?;
    let msg = format!("latency {:.3} us, runtime {secs:.2} s", lat * 1e6);
    if lat <= 5.8e-6 && secs < 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn supervisory_latencies() -> Check {
    let targets = [
        ("shoot_through", 0.15),
        ("overcurrent", 0.18),
        ("overvoltage", 0.12),
        ("thermal_overload", 0.20),
    ];
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, want) in targets {
        let out = run(&bundled(name).unwrap());
        let got = out.metrics.faults[0].t_detect_supervisory;
        let hit = got.is_some_and(|g| (g - want).abs() <= 0.1 * want);
        ok &= hit;
        parts.push(format!(
            "{name} {} (want {want})",
            got.map_or("none".into(), |g| format!("{g:.4}"))
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    let msg = format!("{}; runtime {secs:.1} s", parts.join(", "));
    if ok && secs < 60.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn isolation_curve() -> Check {
    let sweep = parse_sweep(BUNDLED_SWEEP).map_err(|e| e.to_string())?;
    let cells = expand(&sweep).map_err(|e| e.to_string())?;
    let results = map_cells(&cells, None, run_cell);
    let sched = IsolationSchedule::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        let out = res.map_err(|e| format!("{}: {e}", cell.id))?;
        let t_fault = cell.scenario.faults[0].t_start;
        let got = isolation_time(&out.trace)[0]
            .clone()
            .map_err(|e| format!("{}: {e}", cell.id))?;
        // independent closed form, floored at the final delay
        let want = (40e-3 * (-(40.0f64 / 11.37).ln() * t_fault).exp()).max(11.37e-3);
        debug_assert!((isolation_delay(t_fault, &sched) - want).abs() < 1e-9);
        ok &= (got - want).abs() <= 0.05 * want;
        parts.push(format!(
            "t={t_fault}: {:.2} ms (want {:.2})",
            got * 1e3,
            want * 1e3
        ));
    }
    let msg = parts.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn local_maxima(xs: &[f64], prominence: f64) -> usize {
    let (mut count, mut lo, mut hi, mut rising) = (0, f64::INFINITY, f64::NEG_INFINITY, true);
    for &x in xs {
        if rising {
            hi = hi.max(x);
            if hi - x >= prominence && hi - lo >= prominence {
                count += 1;
                rising = false;
                lo = x;
            }
            lo = lo.min(x);
        } else {
            lo = lo.min(x);
            if x - lo >= prominence {
                rising = true;
                hi = x;
            }
        }
    }
    count
}

fn discharge_window(out: &RunOutput) -> Result<(f64, f64, Vec<TickRecord>), String> {
    let d = out
        .metrics
        .discharge
        .as_ref()
        .ok_or("no discharge metrics")?;
    let end = d.t_start + d.t_discharge;
    let ticks = out
        .trace
        .ticks
        .iter()
        .filter(|t| t.t >= d.t_start && t.t <= end)
        .copied()
        .collect();
    Ok((d.t_start, d.t_discharge, ticks))
}

fn discharge_properties() -> Check {
    let hybrid_file = bundled("discharge_hybrid").unwrap();
    let passive_file = bundled("discharge_passive").unwrap();
    let hybrid = run(&hybrid_file);
    let passive = run(&passive_file);
    let (_, t_h, ticks_h) = discharge_window(&hybrid)?;
    let (_, t_p, ticks_p) = discharge_window(&passive)?;

    let a = t_h < t_p;
    let monotone =
        |ticks: &[TickRecord]| ticks.windows(2).all(|w| w[1].v_dc.abs() <= w[0].v_dc.abs());
    let b = monotone(&ticks_h) && monotone(&ticks_p);
    let t_res: Vec<f64> = ticks_h.iter().map(|t| t.t_res).collect();
    let peaks = local_maxima(&t_res, 1.0);
    let c = peaks >= 2;

    let p = &passive_file.config.circuit;
    let tau = p.r_bleed * p.c_dc;
    let v0 = passive_file
        .config
        .engine
        .initial_v_dc
        .unwrap_or(p.v_source);
    let at_tau = passive
        .trace
        .ticks
        .iter()
        .min_by(|x, y| (x.t - tau).abs().total_cmp(&(y.t - tau).abs()))
        .ok_or("empty passive trace")?;
    let analytic = v0 * (-at_tau.t / tau).exp();
    let err = (at_tau.v_dc - analytic).abs() / analytic;
    let d = err <= 0.005;

    let msg = format!(
        "(a) hybrid {t_h:.3} s vs passive {t_p:.3} s {}; (b) monotone energy {}; (c) {peaks} resistor-temperature peaks {}; (d) passive at tau off by {:.3}% {}",
        verdict(a),
        verdict(b),
        verdict(c),
        err * 100.0,
        verdict(d)
    );
    if a && b && c && d {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn energy_audit(suite: &BTreeMap<&str, RunOutput>) -> Check {
    let worst = suite
        .iter()
        .map(|(n, o)| (*n, o.metrics.energy_audit_error))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or("empty suite")?;
    let bad: Vec<String> = suite
        .iter()
        .filter(|(_, o)| {
            o.metrics.energy_audit_error.is_nan() || o.metrics.energy_audit_error >= 0.01
        })
        .map(|(n, o)| format!("{n} {:.3}%", o.metrics.energy_audit_error * 100.0))
        .collect();
    if bad.is_empty() {
        Ok(format!("worst {} at {:.4}%", worst.0, worst.1 * 100.0))
    } else {
        Err(bad.join(", "))
    }
}

fn efficiency_ordering(suite: &BTreeMap<&str, RunOutput>) -> Check {
    let classes = [
        FaultClass::ShortCircuit,
        FaultClass::Overvoltage,
        FaultClass::Thermal,
        FaultClass::Overcurrent,
    ];
    let mut scores = Vec::new();
    for (name, class) in FOUR_CLASS_SUITE.iter().zip(classes) {
        let file = bundled(name).unwrap();
        let out = &suite[name];
        let s = efficiency_score(&out.metrics, class, &file.config.metrics)
            .map_err(|e| e.to_string())?;
        scores.push((class, s));
    }
    let msg = scores
        .iter()
        .map(|(c, s)| format!("{c} {s:.3}"))
        .collect::<Vec<_>>()
        .join(" > ");
    if scores.windows(2).all(|w| w[0].1 > w[1].1) {
        Ok(msg)
    } else {
        Err(format!("{msg} does not hold"))
    }
}

fn fsm_safety(suite: &BTreeMap<&str, RunOutput>) -> Check {
    let st: u64 = suite
        .values()
        .map(|o| o.metrics.healthy_shoot_through_commands)
        .sum();
    let edges: u64 = suite.values().map(|o| o.metrics.isolated_leg_edges).sum();

    let mut early = Vec::new();
    for (name, out) in suite {
        let tr = &out.trace.transitions;
        for (i, x) in tr.iter().enumerate() {
            if x.to != StateKind::Recovering {
                continue;
            }
            let leg = tr[..i]
                .iter()
                .rev()
                .find(|p| p.to == StateKind::Isolating)
                .and_then(|p| p.leg);
            let active = out
                .trace
                .faults
                .iter()
                .any(|f| f.is_active(x.t) && (leg.is_none() || f.kind.leg() == leg));
            if active {
                early.push(format!("{name} at {}", x.t));
            }
        }
    }

    let mut base = bundled("baseline").unwrap();
    let mut spoof = bundled("sensor_spoof").unwrap();
    base.config.protection.enabled = false;
    spoof.config.protection.enabled = false;
    spoof.config.engine.t_end = base.config.engine.t_end;
    let (b, s) = (run(&base), run(&spoof));
    let plant = |o: &RunOutput| -> Vec<(u64, u64, u64, u64)> {
        o.trace
            .ticks
            .iter()
            .map(|t| {
                (
                    t.t.to_bits(),
                    t.v_dc.to_bits(),
                    t.tj_max.to_bits(),
                    t.t_res.to_bits(),
                )
            })
            .collect()
    };
    let identical = plant(&b) == plant(&s) && b.trace.final_state == s.trace.final_state;

    let msg = format!(
        "healthy-leg shoot-through commands {st}, clamped-leg edges {edges}, early recoveries {}, spoofed plant identical to baseline {}",
        early.len(),
        identical
    );
    if st == 0 && edges == 0 && early.is_empty() && identical {
        Ok(msg)
    } else {
        Err(format!("{msg} {}", early.join(", ")))
    }
}

fn determinism() -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["discharge_hybrid", "shoot_through"] {
        let file = bundled(name).unwrap();
        let render = |o: &RunOutput| (trace_csv(&o.trace), summary_json(&build_summary(&file, o)));
        let first = render(&run(&file));
        let second = render(&run(&file));
        let same = first == second;
        ok &= same;
        parts.push(format!("{name} byte-identical {same}"));
    }
    let base = bundled("baseline").unwrap();
    let mut fine = base.clone();
    fine.config.engine.dt_electrical /= 2.0;
    let v1 = run(&base).trace.final_state.v_dc;
    let v2 = run(&fine).trace.final_state.v_dc;
    let shift = (v1 - v2).abs() / v1.abs();
    ok &= shift < 1e-3;
    parts.push(format!("final v_dc shift at dt/2 {:.4}%", shift * 100.0));
    let msg = parts.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn availability(suite: &BTreeMap<&str, RunOutput>) -> Check {
    let out = &suite["shoot_through"];
    let degraded = out
        .trace
        .transitions
        .iter()
        .any(|t| t.to == StateKind::Degraded);
    let a = out.metrics.availability;
    let msg = format!("availability {a:.4}, degraded operation reached {degraded}");
    if a > 0.9 && degraded {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
    let mut results: Vec<(&str, Check)> = vec![
        (
            "1 short-circuit fast detection <= 5.8 us",
            sc_fast_latency(),
        ),
        (
            "2 supervisory latencies within 10%",
            supervisory_latencies(),
        ),
        ("3 isolation-time curve within 5%", isolation_curve()),
        ("4 discharge properties", discharge_properties()),
    ];

    let files: Vec<ScenarioFile> = names.iter().map(|n| bundled(n).unwrap()).collect();
    let outs = map_cells(&files, None, run);
    let suite: BTreeMap<&str, RunOutput> = names.iter().copied().zip(outs).collect();

    results.push(("5 energy audit within 1%", energy_audit(&suite)));
    results.push(("6 efficiency ordering", efficiency_ordering(&suite)));
    results.push(("7 protection safety properties", fsm_safety(&suite)));
    results.push(("8 determinism and dt convergence", determinism()));
    results.push(("9 availability after shoot-through", availability(&suite)));

    let mut failed = 0;
    for (label, r) in &results {
        match r {
            Ok(m) => println!("PASS  {label}: {m}"),
            Err(m) => {
                failed += 1;
                println!("FAIL  {label}: {m}");
            }
        }
    }
    println!(
        "{} of {} acceptance checks passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
