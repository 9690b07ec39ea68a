use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use blocksplit::harness::{
    audit_persisted, declared_k, read_trace_file, run_experiment, schedule_check_config, ExperimentConfig,
    HarnessError, EXIT_CONFIG, EXIT_CONVERGED, EXIT_COVERING, EXIT_NOT_CONVERGED,
};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "blocksplit", version, about = "Block-update fixed-point solver with trace audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and print its summary as JSON.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Trace CSV destination, replacing the one in the config.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Summary JSON destination, replacing the one in the config.
        #[arg(long)]
        summary_out: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the covering condition and the induced weight array.
    ScheduleCheck {
        #[arg(long)]
        config: PathBuf,
        /// Last iteration index to check.
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
    },
    /// Re-run the audits on a trace CSV written by `solve`.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Data(e.to_string()))?;
    // A reader that closes the pipe early is not an error for the run itself.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn solve(
    config: PathBuf,
    trace_out: Option<PathBuf>,
    summary_out: Option<PathBuf>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    seed: Option<u64>,
) -> Result<i32, HarnessError> {
    let mut cfg = ExperimentConfig::from_path(&config)?;
    // Command-line paths are relative to the working directory, not the config.
    let cwd = std::env::current_dir().unwrap_or_default();
    if let Some(p) = trace_out {
        cfg.output.trace = Some(cwd.join(p));
    }
    if let Some(p) = summary_out {
        cfg.output.summary = Some(cwd.join(p));
    }
    if let Some(n) = max_iters {
        cfg.solver.max_iters = n;
    }
    if let Some(t) = tol {
        cfg.solver.tol = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summary = run_experiment(&cfg)?;
    print_json(&summary)?;
    Ok(summary.exit_code)
}

fn schedule_check(config: PathBuf, horizon: usize) -> Result<i32, HarnessError> {
    let cfg = ExperimentConfig::from_path(&config)?;
    let report = schedule_check_config(&cfg, horizon)?;
    print_json(&report)?;
    Ok(if !report.covering_ok {
        EXIT_COVERING
    } else if report.passed() {
        EXIT_CONVERGED
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn audit(trace: PathBuf, config: PathBuf) -> Result<i32, HarnessError> {
    let cfg = ExperimentConfig::from_path(&config)?;
    let k = declared_k(&cfg)?;
    let trace = read_trace_file(&trace, k)?;
    let verdicts = audit_persisted(&cfg, &trace)?;
    print_json(&verdicts)?;
    Ok(if verdicts.all_passed() {
        EXIT_CONVERGED
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve {
            config,
            trace_out,
            summary_out,
            max_iters,
            tol,
            seed,
        } => solve(config, trace_out, summary_out, max_iters, tol, seed),
        Command::ScheduleCheck { config, horizon } => schedule_check(config, horizon),
        Command::Audit { trace, config } => audit(trace, config),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
