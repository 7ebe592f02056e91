//! Command implementations behind the `awcga` binary.

use crate::checks;
use crate::config::{ConfigError, Experiment, RunConfig, RunSpec};
use crate::engine::{self, EngineError, RealizationPolicy, Trace, Verdict};
use crate::scenarios::{self, ScenarioError};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "awcga", version, about = "Weak Chebyshev greedy experiments in l_r spaces")]
pub struct Cli {
    /// Suppress the summary output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configured experiment or named preset and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a property suite: duality, modulus, rates, divergence, lemmas, bounds or all.
    Check {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Run one experiment per cell of the configured parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Run { config, out: path, seed } => cmd_run(&config, path.as_deref(), seed, cli.quiet, out, err),
        Command::Check { suite } => cmd_check(&suite, cli.quiet, out, err),
        Command::Sweep { config, out: path, seed } => {
            cmd_sweep(&config, path.as_deref(), seed, cli.quiet, out, err)
        }
    }
}

fn engine_exit(e: &EngineError) -> i32 {
    match e {
        EngineError::Solver { .. } => EXIT_SOLVER,
        EngineError::Contract { .. } | EngineError::OutsideSpan { .. } | EngineError::Supplier { .. } => {
            EXIT_INVARIANT
        }
        _ => EXIT_CONFIG,
    }
}

fn scenario_exit(e: &ScenarioError) -> i32 {
    match e {
        ScenarioError::Run(f) => engine_exit(&f.error),
        ScenarioError::Claim { .. } => EXIT_INVARIANT,
        _ => EXIT_CONFIG,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<(RunConfig, Experiment), ConfigError> {
    let cfg = RunConfig::load(path)?;
    let exp = cfg.build(seed)?;
    Ok((cfg, exp))
}

fn run_spec(spec: &RunSpec) -> Result<Trace, engine::RunFailure> {
    let mut policy = RealizationPolicy::canonical(spec.tie_break, spec.utilization);
    engine::run(&spec.problem, &mut policy, &spec.options)
}

fn summary(trace: &Trace, seconds: f64) -> String {
    let mut s = format!(
        "verdict={} final_residual={:.16e} steps={} wall_time={seconds:.3}s",
        trace.verdict.label(),
        trace.final_residual_norm(),
        trace.steps()
    );
    if let Verdict::Aborted { reason } = &trace.verdict {
        s.push_str(&format!(" reason=\"{reason}\""));
    }
    s
}

pub fn cmd_run(
    config: &Path,
    out_path: Option<&Path>,
    seed: Option<u64>,
    quiet: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let (cfg, exp) = match load(config, seed) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let path = out_path
        .map(Path::to_path_buf)
        .or(cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("trace.csv"));
    let start = Instant::now();
    let (trace, code) = match exp {
        Experiment::Preset { name, n_max } => match scenarios::run_preset(&name, n_max) {
            Ok(trace) => (Some(trace), EXIT_OK),
            Err(e) => {
                let _ = writeln!(err, "preset {name} failed: {e}");
                let code = scenario_exit(&e);
                match e {
                    ScenarioError::Run(f) => (Some(f.trace), code),
                    _ => (None, code),
                }
            }
        },
        Experiment::Run(spec) => match run_spec(&spec) {
            Ok(trace) => (Some(trace), EXIT_OK),
            Err(f) => {
                let _ = writeln!(err, "run failed: {}", f.error);
                let code = engine_exit(&f.error);
                (Some(f.trace), code)
            }
        },
    };
    let seconds = start.elapsed().as_secs_f64();
    if let Some(trace) = trace {
        if let Err(e) = trace.write_csv(&path) {
            let _ = writeln!(err, "cannot write {}: {e}", path.display());
            return EXIT_CONFIG;
        }
        if !quiet {
            let _ = writeln!(out, "{}", summary(&trace, seconds));
        }
    }
    code
}

pub fn cmd_check(suite: &str, quiet: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(lines) = checks::run_suite(suite) else {
        let _ = writeln!(
            err,
            "unknown suite {suite:?}; expected one of {}, all",
            checks::SUITES.join(", ")
        );
        return EXIT_CONFIG;
    };
    let failed = lines.iter().filter(|l| !l.passed).count();
    for l in &lines {
        if !quiet || !l.passed {
            let _ = writeln!(out, "{l}");
        }
    }
    if !quiet {
        let _ = writeln!(out, "{} checks, {} failed", lines.len(), failed);
    }
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    }
}

pub const SWEEP_HEADER: &str = "t,delta,eta,verdict,final_residual,steps,steps_to_tolerance,error";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn quote(s: &str) -> String {
    if s.is_empty() {
        String::new()
    } else {
        format!("\"{}\"", s.replace('"', "\"\""))
    }
}

pub fn cmd_sweep(
    config: &Path,
    out_path: Option<&Path>,
    seed: Option<u64>,
    quiet: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let (cfg, exp) = match load(config, seed) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let Experiment::Run(spec) = exp else {
        let _ = writeln!(err, "config error: presets cannot be swept");
        return EXIT_CONFIG;
    };
    let cells = match cfg.sweep.clone().unwrap_or_default().cells() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let path = out_path
        .map(Path::to_path_buf)
        .or(cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    let rows: Vec<(String, bool)> = cells
        .par_iter()
        .map(|cell| {
            let params = format!("{},{},{}", opt(cell.t), opt(cell.delta), opt(cell.eta));
            let result = cell.apply(&spec).map_err(|e| e.to_string()).and_then(|s| {
                run_spec(&s).map_err(|f| format!("{}", f.error))
            });
            match result {
                Ok(trace) => {
                    let to_tol = match trace.verdict {
                        Verdict::Converged { step, .. } => step.to_string(),
                        _ => String::new(),
                    };
                    (
                        format!(
                            "{params},{},{:.16e},{},{to_tol},",
                            trace.verdict.label(),
                            trace.final_residual_norm(),
                            trace.steps()
                        ),
                        true,
                    )
                }
                Err(e) => (format!("{params},failed,,,,{}", quote(&e)), false),
            }
        })
        .collect();
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for (row, _) in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    if let Err(e) = std::fs::write(&path, csv) {
        let _ = writeln!(err, "cannot write {}: {e}", path.display());
        return EXIT_CONFIG;
    }
    if !quiet {
        let failed = rows.iter().filter(|r| !r.1).count();
        let _ = writeln!(out, "cells={} failed={} output={}", rows.len(), failed, path.display());
    }
    EXIT_OK
}
