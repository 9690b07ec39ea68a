//! Experiment plumbing: JSON configs, CSV data and traces, run summaries
//! with audit verdicts, and reference solutions computed without the block
//! solver.

mod config;
mod data;
mod oracle;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::operators::{Point, Weights};
use crate::problems::ProblemError;
use crate::schedules::{check_concentrating, mu_row, validate_covering, BlockSchedule, ScheduleError};
use crate::solver::{
    distances, fejer_audit_distances, linear_rate_audit_distances, reference_solution, run, run_economical,
    SolverError, Trace,
};

pub use config::{
    AffineSpec, AuditConfig, BuiltProblem, ErrorConfig, ExperimentConfig, MapSpec, OuterSpec, OutputConfig,
    PhiSpec, ProblemConfig, RandomInstance, ScheduleConfig, SetSpec, SolverParams, TermSpec, VariantName,
    resolve_threads, THREADS_ENV,
};
pub use data::{
    parse_regression_csv, read_regression_csv, read_trace, read_trace_file, trace_to_csv, write_trace, TRACE_HEADER,
};
pub use oracle::{
    oracle_least_squares, oracle_prox_grad_reference, OracleError, OracleResult, LEAST_SQUARES_ACCURACY,
    PROX_GRAD_ITERATION_CAP, PROX_GRAD_OPTIMALITY, PROX_GRAD_TOLERANCE,
};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COVERING: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad data: {0}")]
    Data(String),
    #[error(transparent)]
    Problem(ProblemError),
    #[error(transparent)]
    Covering(ScheduleError),
    #[error("divergence: {0}")]
    Divergence(SolverError),
    #[error(transparent)]
    Solver(SolverError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Covering(_) => EXIT_COVERING,
            HarnessError::Divergence(_) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

fn is_covering(e: &ScheduleError) -> bool {
    matches!(
        e,
        ScheduleError::CoveringViolation { .. } | ScheduleError::NotActivated { .. } | ScheduleError::HorizonTooShort { .. }
    )
}

impl From<SolverError> for HarnessError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonFinite { .. } => HarnessError::Divergence(e),
            SolverError::Schedule(s) if is_covering(&s) => HarnessError::Covering(s),
            other => HarnessError::Solver(other),
        }
    }
}

impl From<ProblemError> for HarnessError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Solver(s) => s.into(),
            other => HarnessError::Problem(other),
        }
    }
}

/// Exit status of a finished or failed experiment.
pub fn exit_code(result: &Result<Summary, HarnessError>) -> i32 {
    match result {
        Ok(s) => s.exit_code,
        Err(e) => e.exit_code(),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FejerVerdict {
    pub passed: bool,
    pub checked: usize,
    /// Absent when no step was checked.
    pub max_violation: Option<f64>,
    pub tolerance: f64,
    pub failures: usize,
    pub first_failure: Option<usize>,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateVerdict {
    pub passed: bool,
    pub rho: f64,
    pub xi_hat: f64,
    pub checked: usize,
    pub max_excess: Option<f64>,
    pub failures: usize,
    pub first_failure: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdicts {
    pub fejer: Option<FejerVerdict>,
    pub rate: Option<RateVerdict>,
    /// Why an audit was skipped.
    pub notes: Vec<String>,
}

impl AuditVerdicts {
    pub fn all_passed(&self) -> bool {
        self.fejer.as_ref().is_none_or(|f| f.passed) && self.rate.as_ref().is_none_or(|r| r.passed)
    }
}

/// Audits a trace from its logged reference distances. `rates` are the
/// declared Lipschitz constants `(rho_0, rho_i)`; the rate audit runs only
/// when their combination lies in `(0, 1)`.
pub fn audit_trace(
    trace: &Trace,
    weights: &Weights,
    rates: Option<(f64, Vec<f64>)>,
) -> Result<AuditVerdicts, HarnessError> {
    let mut out = AuditVerdicts::default();
    let d = match distances(trace, None) {
        Ok(d) => d,
        Err(SolverError::MissingIterates) => {
            out.notes.push("trace carries no reference distances".into());
            return Ok(out);
        }
        Err(e) => return Err(e.into()),
    };
    let f = fejer_audit_distances(&d, &trace.records, weights, trace.k)?;
    out.fejer = Some(FejerVerdict {
        passed: f.passed,
        checked: f.checked,
        max_violation: finite(f.max_violation),
        tolerance: f.tolerance,
        failures: f.failures.len(),
        first_failure: f.failures.first().copied(),
        monotone: f.monotone,
    });
    let errors_present = trace.records.iter().any(|r| r.err0 != 0.0 || r.errsum != 0.0);
    match rates {
        None => out.notes.push("rate audit skipped: operators vary with n".into()),
        Some(_) if errors_present => out.notes.push("rate audit skipped: errors were injected".into()),
        Some((rho0, rhos)) => {
            let rho = rho0 * weights.as_slice().iter().zip(&rhos).map(|(w, r)| w * r).sum::<f64>();
            if rho > 0.0 && rho < 1.0 {
                let r = linear_rate_audit_distances(&d, trace.k, rho);
                out.rate = Some(RateVerdict {
                    passed: r.passed,
                    rho: r.rho,
                    xi_hat: r.xi_hat,
                    checked: r.checked,
                    max_excess: finite(r.max_excess),
                    failures: r.failures.len(),
                    first_failure: r.failures.first().copied(),
                });
            } else {
                out.notes.push(format!("rate audit skipped: combined factor {rho} is not in (0, 1)"));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: String,
    pub exit_code: i32,
    pub iterations: usize,
    pub final_residual: f64,
    pub tol: f64,
    pub wall_time_seconds: f64,
    pub dim: usize,
    pub m: usize,
    pub k: usize,
    pub gamma: Option<f64>,
    pub objective: Option<f64>,
    pub reference_residual: Option<f64>,
    pub solution: Vec<f64>,
    pub audits: AuditVerdicts,
}

/// Everything a run produced: the summary and the trace as written.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: Summary,
    pub trace_csv: String,
    pub solution: Point,
}

struct Prepared {
    built: BuiltProblem,
    schedule: BlockSchedule,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let built = cfg.build_problem()?;
    if let Some(m) = cfg.schedule_m.filter(|&m| m != built.problem.m()) {
        return Err(HarnessError::Config(format!(
            "schedule names m = {m} but the problem has {} operators",
            built.problem.m()
        )));
    }
    let schedule = cfg.schedule.build(built.problem.m(), cfg.seed)?;
    Ok(Prepared { built, schedule })
}

/// Builds the problem and schedule, runs the solver, writes the trace and
/// summary where configured and returns both.
pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    let Prepared { built, schedule } = prepare(cfg)?;
    let problem = &built.problem;
    let horizon = if schedule.covers_by_construction() {
        schedule.k()
    } else {
        cfg.solver.max_iters.max(schedule.k())
    };
    validate_covering(&schedule, horizon).map_err(|e| {
        if is_covering(&e) {
            HarnessError::Covering(e)
        } else {
            HarnessError::Config(e.to_string())
        }
    })?;
    let x0 = match &cfg.x0 {
        Some(v) if v.len() != problem.dim() => {
            return Err(HarnessError::Config(format!(
                "x0 has {} entries, the problem lives in R^{}",
                v.len(),
                problem.dim()
            )))
        }
        Some(v) => Point::from(v.clone()),
        None => Point::zeros(problem.dim()),
    };
    let mut solver_cfg = cfg.solver_config(schedule)?;
    let mut reference_residual = None;
    if cfg.audit.enabled {
        let (x_ref, res) = reference_solution(problem, x0.clone(), cfg.audit.reference_iters)?;
        reference_residual = Some(res);
        solver_cfg = solver_cfg.reference(x_ref);
    }

    let started = Instant::now();
    let outcome = match cfg.solver.variant {
        VariantName::Direct => run(problem, &solver_cfg, x0)?,
        VariantName::Economical => run_economical(problem, &solver_cfg, x0)?,
    };
    let wall = started.elapsed().as_secs_f64();

    let trace_csv = trace_to_csv(&outcome.trace);
    // audit what was persisted, so offline re-audits agree exactly
    let persisted = read_trace(trace_csv.as_bytes(), outcome.trace.k)?;
    let audits = audit_trace(&persisted, problem.weights(), problem.declared_rates())?;

    let converged = outcome.converged();
    let summary = Summary {
        status: if converged { "converged" } else { "max_iters" }.into(),
        exit_code: if converged { EXIT_CONVERGED } else { EXIT_NOT_CONVERGED },
        iterations: outcome.iterations,
        final_residual: outcome.final_residual,
        tol: cfg.solver.tol,
        wall_time_seconds: wall,
        dim: problem.dim(),
        m: problem.m(),
        k: outcome.trace.k,
        gamma: built.gamma,
        objective: built.objective.as_ref().map(|f| f(&outcome.solution)),
        reference_residual,
        solution: outcome.solution.as_slice().to_vec(),
        audits,
    };
    if let Some(path) = &cfg.output.trace {
        write_file(&cfg.resolve(path), trace_csv.as_bytes())?;
    }
    if let Some(path) = &cfg.output.summary {
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(&cfg.resolve(path), json.as_bytes())?;
    }
    Ok(Experiment {
        summary,
        trace_csv,
        solution: outcome.solution,
    })
}

/// [`run_experiment_full`] reduced to its summary. Use [`exit_code`] for the
/// process status.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary, HarnessError> {
    run_experiment_full(cfg).map(|e| e.summary)
}

fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Re-audits a persisted trace against the problem its config describes.
pub fn audit_persisted(cfg: &ExperimentConfig, trace: &Trace) -> Result<AuditVerdicts, HarnessError> {
    let Prepared { built, schedule } = prepare(cfg)?;
    let trace = Trace {
        k: schedule.k(),
        ..trace.clone()
    };
    audit_trace(&trace, built.problem.weights(), built.problem.declared_rates())
}

/// The covering constant the config's schedule declares.
pub fn declared_k(cfg: &ExperimentConfig) -> Result<usize, HarnessError> {
    Ok(prepare(cfg)?.schedule.k())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub m: usize,
    pub k: usize,
    pub horizon: usize,
    pub covering_ok: bool,
    pub covering_error: Option<String>,
    pub rows_checked: usize,
    pub max_row_sum_error: f64,
    pub band_ok: bool,
    pub nonnegative: bool,
    pub diagonal_infimum: f64,
    pub concentrating_ok: bool,
}

impl ScheduleReport {
    pub fn passed(&self) -> bool {
        self.covering_ok && self.concentrating_ok
    }
}

/// Checks the covering condition up to `horizon` and the concentrating
/// properties of the induced array rows `0..=horizon`.
pub fn schedule_check(schedule: &BlockSchedule, weights: &Weights, horizon: usize) -> ScheduleReport {
    let covering = validate_covering(schedule, horizon);
    let rows: Result<Vec<_>, _> = (0..=horizon).map(|n| mu_row(schedule, weights.as_slice(), n)).collect();
    let base = ScheduleReport {
        m: schedule.m(),
        k: schedule.k(),
        horizon,
        covering_ok: covering.is_ok(),
        covering_error: covering.err().map(|e| e.to_string()),
        rows_checked: 0,
        max_row_sum_error: f64::NAN,
        band_ok: false,
        nonnegative: false,
        diagonal_infimum: f64::NAN,
        concentrating_ok: false,
    };
    match rows {
        Ok(rows) => {
            let r = check_concentrating(&rows, schedule.k());
            ScheduleReport {
                rows_checked: r.rows_checked,
                max_row_sum_error: r.max_row_sum_error,
                band_ok: r.band_ok,
                nonnegative: r.nonnegative,
                diagonal_infimum: r.diagonal_infimum,
                concentrating_ok: r.passed,
                ..base
            }
        }
        Err(_) => base,
    }
}

/// [`schedule_check`] on the schedule and weights a config describes.
pub fn schedule_check_config(cfg: &ExperimentConfig, horizon: usize) -> Result<ScheduleReport, HarnessError> {
    let Prepared { built, schedule } = prepare(cfg)?;
    Ok(schedule_check(&schedule, built.problem.weights(), horizon))
}

#[cfg(test)]
mod tests;
