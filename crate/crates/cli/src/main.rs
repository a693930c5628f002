//! `phaseguard` command-line runner.
//!
//! Exit codes: 0 success, 2 invalid input (scenario, sweep or artifact),
//! 3 numerical divergence, 1 anything else (I/O, internal errors).

mod plot;
mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use phaseguard::engine::{run_scenario, EngineError, RunOutput};
use phaseguard::report::{write_atomic, write_run, Summary};
use phaseguard::scenario::{bundled, parse_scenario, ScenarioFile, BUNDLED, BUNDLED_SWEEP};
use phaseguard::sweep::{
    aggregate_csv, expand, map_cells, parse_sweep, thread_limit_from_env, SweepFile, SweepRow,
};

#[derive(Parser)]
#[command(
    name = "phaseguard",
    version,
    about = "Fault-protection simulator for N-phase traction inverters"
)]
struct Cli {
    /// Suppress the per-run summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario: a JSON file, or the name of a bundled scenario.
    Run {
        scenario: String,
        #[arg(short, long)]
        out: PathBuf,
        /// Override the scenario's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every cell of a parameter sweep and write an aggregate CSV.
    Sweep {
        /// Sweep JSON file, or `isolation` for the bundled isolation-time sweep.
        sweep: String,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render SVG figures from summary.json files or directories holding them.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run all bundled scenarios and the isolation sweep, then plot them.
    Suite {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List bundled scenarios, or print one.
    Scenarios { name: Option<String> },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn invalid(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            err: err.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self { code: 1, err }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Self {
            code: 1,
            err: err.into(),
        }
    }
}

fn engine_failure(name: &str, e: EngineError) -> Failure {
    let code = match e {
        EngineError::InvalidConfig(_) | EngineError::InvalidScenario(_) => 2,
        EngineError::NumericalDivergence { .. } | EngineError::Thermal(_) => 3,
        EngineError::Fsm(_) => 1,
    };
    Failure {
        code,
        err: anyhow!(e).context(format!("scenario {name}")),
    }
}

type Outcome = Result<(), Failure>;

fn load_scenario(arg: &str) -> Result<ScenarioFile, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::invalid)?;
        let mut file = parse_scenario(&text)
            .with_context(|| format!("{}", path.display()))
            .map_err(Failure::invalid)?;
        if file.name.is_empty() {
            file.name = path
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        }
        return Ok(file);
    }
    bundled(arg).ok_or_else(|| Failure::invalid(anyhow!("{arg}: no such file or bundled scenario")))
}

fn summary_line(s: &Summary) -> String {
    let m = &s.metrics;
    let mut line = format!("{}: availability {:.4}", s.name, m.availability);
    for f in &m.faults {
        let _ = write!(line, "; {}", f.label);
        if let Some(t) = f.t_detect_fast {
            let _ = write!(line, " fast {:.2} us", t * 1e6);
        }
        if let Some(t) = f.t_detect_supervisory {
            let _ = write!(line, " supervisory {t:.4} s");
        }
        if let Some(t) = f.t_isolate {
            let _ = write!(line, " isolated in {:.2} ms", t * 1e3);
        }
        if !f.detected {
            line.push_str(" undetected");
        }
    }
    if let Some(e) = m.efficiency {
        let _ = write!(line, "; efficiency {e:.3}");
    }
    if let Some(t) = m.t_discharge {
        let _ = write!(line, "; discharged in {t:.3} s");
    }
    let _ = write!(line, "; energy audit {:.4}%", m.energy_audit_error * 100.0);
    line
}

fn write_figures(dir: &Path, summaries: &[Summary]) -> Result<usize, Failure> {
    let figs = plot::figures(summaries);
    if figs.is_empty() {
        return Ok(0);
    }
    fs::create_dir_all(dir)?;
    for (name, svg) in &figs {
        write_atomic(&dir.join(name), svg.as_bytes())?;
    }
    Ok(figs.len())
}

fn execute(file: &ScenarioFile, dir: &Path) -> Result<Summary, Failure> {
    let out: RunOutput =
        run_scenario(&file.scenario()).map_err(|e| engine_failure(&file.name, e))?;
    let summary =
        write_run(dir, file, &out).with_context(|| format!("writing {}", dir.display()))?;
    if file.output.plots {
        write_figures(dir, std::slice::from_ref(&summary))?;
    }
    Ok(summary)
}

fn cmd_run(scenario: &str, out: &Path, seed: Option<u64>, quiet: bool) -> Outcome {
    let mut file = load_scenario(scenario)?;
    if let Some(s) = seed {
        file.config.engine.seed = s;
    }
    let summary = execute(&file, out)?;
    if !quiet {
        println!("{}", summary_line(&summary));
    }
    Ok(())
}

fn load_sweep(arg: &str) -> Result<SweepFile, Failure> {
    let text = if arg == "isolation" && !Path::new(arg).exists() {
        BUNDLED_SWEEP.to_string()
    } else {
        fs::read_to_string(arg)
            .with_context(|| format!("reading {arg}"))
            .map_err(Failure::invalid)?
    };
    parse_sweep(&text)
        .with_context(|| arg.to_string())
        .map_err(Failure::invalid)
}

/// Runs the cells and writes their outputs plus `sweep.csv`. Returns the
/// summaries of the cells that completed.
fn run_sweep(
    sweep: &SweepFile,
    out: &Path,
    seed: Option<u64>,
    quiet: bool,
) -> Result<Vec<Summary>, Failure> {
    let mut cells = expand(sweep).map_err(Failure::invalid)?;
    if let Some(s) = seed {
        for c in &mut cells {
            c.scenario.config.engine.seed = s;
        }
    }
    fs::create_dir_all(out)?;
    let results = map_cells(&cells, thread_limit_from_env(), |cell| {
        let res = run_scenario(&cell.scenario.scenario());
        let row = SweepRow::from_result(cell, &res);
        let written = match &res {
            Ok(o) => write_run(&out.join(&cell.id), &cell.scenario, o).map(Some),
            Err(_) => Ok(None),
        };
        (row, res.err(), written)
    });

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut diverged = Vec::new();
    for (cell, (row, err, written)) in cells.iter().zip(results) {
        rows.push(row);
        match written.with_context(|| format!("writing {}", cell.id))? {
            Some(s) => summaries.push(s),
            None => {
                let e = err.map_or_else(|| "unknown error".to_string(), |e| e.to_string());
                if !quiet {
                    eprintln!("{}: {e}", cell.id);
                }
                diverged.push(cell.id.clone());
            }
        }
    }
    write_atomic(
        &out.join("sweep.csv"),
        aggregate_csv(&sweep.axes, &rows).as_bytes(),
    )?;
    if cells.iter().any(|c| c.scenario.output.plots) {
        write_figures(&out.join("plots"), &summaries)?;
    }
    if !quiet {
        for s in &summaries {
            println!("{}", summary_line(s));
        }
    }
    if diverged.is_empty() {
        Ok(summaries)
    } else {
        Err(Failure {
            code: 3,
            err: anyhow!(
                "{} sweep cell(s) failed: {}",
                diverged.len(),
                diverged.join(", ")
            ),
        })
    }
}

fn cmd_sweep(arg: &str, out: &Path, seed: Option<u64>, quiet: bool) -> Outcome {
    let sweep = load_sweep(arg)?;
    run_sweep(&sweep, out, seed, quiet).map(|_| ())
}

fn collect_summaries(path: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() || e.file_name().is_some_and(|n| n == "summary.json") {
                collect_summaries(&e, found)?;
            }
        }
    } else {
        found.push(path.to_path_buf());
    }
    Ok(())
}

fn cmd_plot(inputs: &[PathBuf], out: &Path, quiet: bool) -> Outcome {
    let mut paths = Vec::new();
    for p in inputs {
        if !p.exists() {
            return Err(Failure::invalid(anyhow!(
                "{}: no such file or directory",
                p.display()
            )));
        }
        collect_summaries(p, &mut paths)?;
    }
    if paths.is_empty() {
        return Err(Failure::invalid(anyhow!(
            "no summary.json found in the inputs"
        )));
    }
    let mut summaries = Vec::new();
    for p in &paths {
        let text = fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(Failure::invalid)?;
        let s: Summary = serde_json::from_str(&text)
            .with_context(|| format!("{}: not a run summary", p.display()))
            .map_err(Failure::invalid)?;
        summaries.push(s);
    }
    let n = write_figures(out, &summaries)?;
    if n == 0 {
        return Err(Failure::invalid(anyhow!("inputs hold no plottable data")));
    }
    if !quiet {
        println!("wrote {n} figure(s) to {}", out.display());
    }
    Ok(())
}

fn cmd_suite(out: &Path, seed: Option<u64>, quiet: bool) -> Outcome {
    let mut files: Vec<ScenarioFile> = BUNDLED.iter().filter_map(|(n, _)| bundled(n)).collect();
    if let Some(s) = seed {
        for f in &mut files {
            f.config.engine.seed = s;
        }
    }
    let results = map_cells(&files, thread_limit_from_env(), |f| {
        execute(f, &out.join(&f.name))
    });
    let mut summaries = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => {
                eprintln!("{:#}", e.err);
                failure.get_or_insert(e);
            }
        }
    }
    let sweep = load_sweep("isolation")?;
    match run_sweep(&sweep, &out.join("sweep_isolation"), seed, true) {
        Ok(s) => summaries.extend(s),
        Err(e) => {
            eprintln!("{:#}", e.err);
            failure.get_or_insert(e);
        }
    }
    // Same order `plot` would read them back in, so the figures match.
    let mut keyed: Vec<(PathBuf, Summary)> = summaries
        .into_iter()
        .map(|s| {
            let dir = if BUNDLED.iter().any(|(n, _)| *n == s.name) {
                out.join(&s.name)
            } else {
                out.join("sweep_isolation")
                    .join(s.name.rsplit('/').next().unwrap_or(""))
            };
            (dir, s)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let summaries: Vec<Summary> = keyed.into_iter().map(|(_, s)| s).collect();
    let n = write_figures(&out.join("plots"), &summaries)?;
    if !quiet {
        for s in summaries
            .iter()
            .filter(|s| BUNDLED.iter().any(|(n, _)| *n == s.name))
        {
            println!("{}", summary_line(s));
        }
        println!("wrote {n} figure(s) to {}", out.join("plots").display());
    }
    failure.map_or(Ok(()), Err)
}

fn cmd_scenarios(name: Option<&str>) -> Outcome {
    match name {
        None => {
            for (n, _) in BUNDLED {
                let desc = bundled(n).map(|f| f.description).unwrap_or_default();
                println!("{n:<20} {desc}");
            }
            Ok(())
        }
        Some(n) => {
            let (_, text) = BUNDLED
                .iter()
                .find(|(b, _)| *b == n)
                .ok_or_else(|| Failure::invalid(anyhow!("{n}: no such bundled scenario")))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run {
            scenario,
            out,
            seed,
        } => cmd_run(scenario, out, *seed, cli.quiet),
        Command::Sweep { sweep, out, seed } => cmd_sweep(sweep, out, *seed, cli.quiet),
        Command::Plot { inputs, out } => cmd_plot(inputs, out, cli.quiet),
        Command::Suite { out, seed } => cmd_suite(out, *seed, cli.quiet),
        Command::Scenarios { name } => cmd_scenarios(name.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
