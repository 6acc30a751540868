//! `sdcps`: run, validate, twin-compare and sweep scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sdcps_core::composition::speedup_curve;
use sdcps_core::harness::{parse_scenario, run, RunError, Scenario, ScenarioError};
use sdcps_core::sandbox::spawn_twin;

const EXIT_INVALID: u8 = 1;
const EXIT_ABORT: u8 = 2;

#[derive(Parser)]
#[command(name = "sdcps", version, about = "Deterministic software-defined cyber-physical system simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario for its horizon.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long, env = "SDCPS_SEED")]
        seed: Option<u64>,
        /// Overrides the scenario horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Writes per-tick metrics as JSON lines, summary last.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prints only the trace hash.
        #[arg(long)]
        trace_hash: bool,
    },
    /// Check a scenario without running it.
    Validate { scenario: PathBuf },
    /// Run the physical world and a twin side by side and compare traces.
    TwinCompare {
        scenario: PathBuf,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, env = "SDCPS_SEED")]
        seed: Option<u64>,
    },
    /// Makespan and speedup of the scenario's workload over instance counts.
    Sweep {
        scenario: PathBuf,
        /// Comma-separated instance counts.
        #[arg(long, value_delimiter = ',')]
        instances: Option<Vec<u32>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure carrying the process exit status.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn invalid(err: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_INVALID,
            err: err.into(),
        }
    }

    fn abort(err: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_ABORT,
            err: err.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Invalid(e) => Failure::invalid(e),
            RunError::Abort(e) => Failure::abort(e),
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::invalid)?;
    let mut s = parse_scenario(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::invalid)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::abort)
}

fn report_validation(e: &ScenarioError) {
    match e {
        ScenarioError::ValidationError(errs) => {
            for m in errs {
                eprintln!("invalid: {m}");
            }
        }
        other => eprintln!("invalid: {other}"),
    }
}

fn exec(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run {
            scenario,
            seed,
            horizon,
            out,
            trace_hash,
        } => {
            let mut s = load(&scenario, seed)?;
            if let Some(h) = horizon {
                s.horizon = h;
            }
            let output = run(&s).map_err(|e| {
                if let RunError::Invalid(v) = &e {
                    report_validation(v);
                }
                Failure::from(e)
            })?;
            if let Some(out) = out {
                write(&out, &output.metrics_jsonl())?;
            }
            if trace_hash {
                println!("{}", output.trace_hash);
            } else {
                let sm = &output.summary;
                println!(
                    "ticks={} seed={} delivered={} dropped={} cloned={} violations={} trace={}",
                    sm.ticks,
                    sm.seed,
                    sm.delivered_units,
                    sm.dropped_units,
                    sm.cloned_units,
                    sm.slice_violations,
                    output.trace_hash
                );
            }
        }
        Cmd::Validate { scenario } => {
            let s = load(&scenario, None)?;
            if let Err(e) = s.validate() {
                report_validation(&e);
                return Err(Failure::invalid(e));
            }
            println!(
                "ok: {} nodes, {} links, {} domains, {} tenants, {} flows",
                s.nodes.len(),
                s.links.len(),
                s.domains.len().max(1),
                s.tenants.len(),
                s.flows.len()
            );
        }
        Cmd::TwinCompare {
            scenario,
            horizon,
            seed,
        } => {
            let s = load(&scenario, seed)?;
            let h = horizon.unwrap_or(s.horizon);
            let mut physical = s.build().map_err(|e| {
                report_validation(&e);
                Failure::invalid(e)
            })?;
            let mut twin = spawn_twin(&physical).map_err(Failure::abort)?;
            physical.run(h).map_err(Failure::abort)?;
            twin.run(h).map_err(Failure::abort)?;
            let (p, t) = (physical.trace_hash(), twin.trace_hash());
            println!("physical {p}");
            println!("twin     {t}");
            if p == t {
                println!("PASS fidelity over {h} ticks");
            } else {
                println!("FAIL fidelity over {h} ticks");
                return Err(Failure::abort(anyhow::anyhow!(
                    "twin diverged from physical world"
                )));
            }
        }
        Cmd::Sweep {
            scenario,
            instances,
            out,
        } => {
            let s = load(&scenario, None)?;
            let mut spec = s.sweep_spec();
            if let Some(i) = instances {
                spec.instances = i;
            }
            let curve =
                speedup_curve(spec.tasks, &spec.instances, spec.cost).map_err(Failure::invalid)?;
            let mut csv = String::from("m,makespan,speedup\n");
            for p in &curve {
                csv.push_str(&format!("{},{},{:.6}\n", p.m, p.makespan, p.speedup));
            }
            match out {
                Some(out) => write(&out, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match exec(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
