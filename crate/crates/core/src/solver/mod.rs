//! The block-iterative update, its running-sum variant, and post-hoc audits
//! of a recorded run.

mod audit;
mod perturb;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::operators::{weighted_sum, AveragedOp, OperatorError, Point, Weights};
use crate::schedules::{validate_covering, BlockSchedule, ScheduleError};

pub use audit::{
    distances, error_sums, fejer_audit, fejer_audit_distances, linear_rate_audit,
    linear_rate_audit_distances, rate_envelope,
    FejerReport, RateReport, FEJER_TOLERANCE, RATE_SLACK,
};
pub use perturb::ErrorModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("iterate became non-finite at step {n}")]
    NonFinite { n: usize },
    #[error("operator {label} declares alpha = {alpha}, which must be below 1/(1+epsilon) = {bound}")]
    AlphaTooLarge { label: String, alpha: f64, bound: f64 },
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} operators or values, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("trace holds neither iterates nor reference distances")]
    MissingIterates,
    #[error("no contraction factor below one is declared (rho = {0})")]
    NoContraction(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

type FamilyFn = dyn Fn(usize) -> AveragedOp + Send + Sync;

/// The operators `T_{i,n}` for one index `i`, as a function of `n`.
#[derive(Clone)]
pub enum OperatorFamily {
    Constant(AveragedOp),
    Varying { dim: usize, at: Arc<FamilyFn> },
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorFamily::Constant(op) => f.debug_tuple("Constant").field(op).finish(),
            OperatorFamily::Varying { dim, .. } => write!(f, "Varying {{ dim: {dim} }}"),
        }
    }
}

impl OperatorFamily {
    pub fn varying<F>(dim: usize, at: F) -> Self
    where
        F: Fn(usize) -> AveragedOp + Send + Sync + 'static,
    {
        OperatorFamily::Varying { dim, at: Arc::new(at) }
    }

    pub fn dim(&self) -> usize {
        match self {
            OperatorFamily::Constant(op) => op.dim(),
            OperatorFamily::Varying { dim, .. } => *dim,
        }
    }

    pub fn at(&self, n: usize) -> AveragedOp {
        match self {
            OperatorFamily::Constant(op) => op.clone(),
            OperatorFamily::Varying { at, .. } => at(n),
        }
    }

    pub fn as_constant(&self) -> Option<&AveragedOp> {
        match self {
            OperatorFamily::Constant(op) => Some(op),
            OperatorFamily::Varying { .. } => None,
        }
    }
}

impl From<AveragedOp> for OperatorFamily {
    fn from(op: AveragedOp) -> Self {
        OperatorFamily::Constant(op)
    }
}

/// Outer operator `T_0`, block operators `T_1..T_m` and their weights.
#[derive(Clone, Debug)]
pub struct SplittingProblem {
    t0: OperatorFamily,
    ts: Vec<OperatorFamily>,
    weights: Weights,
    dim: usize,
}

impl SplittingProblem {
    pub fn new(
        t0: OperatorFamily,
        ts: Vec<OperatorFamily>,
        weights: Weights,
    ) -> Result<Self, SolverError> {
        if ts.is_empty() {
            return Err(SolverError::Operator(OperatorError::Empty));
        }
        if ts.len() != weights.len() {
            return Err(SolverError::CountMismatch {
                expected: ts.len(),
                got: weights.len(),
            });
        }
        let dim = t0.dim();
        if let Some(bad) = ts.iter().find(|t| t.dim() != dim) {
            return Err(SolverError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(SplittingProblem { t0, ts, weights, dim })
    }

    /// Constant operator families.
    pub fn autonomous(
        t0: AveragedOp,
        ts: Vec<AveragedOp>,
        weights: Weights,
    ) -> Result<Self, SolverError> {
        Self::new(t0.into(), ts.into_iter().map(Into::into).collect(), weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.ts.len()
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn outer(&self) -> &OperatorFamily {
        &self.t0
    }

    pub fn blocks(&self) -> &[OperatorFamily] {
        &self.ts
    }

    pub fn with_weights(mut self, weights: Weights) -> Result<Self, SolverError> {
        if weights.len() != self.m() {
            return Err(SolverError::CountMismatch {
                expected: self.m(),
                got: weights.len(),
            });
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn is_autonomous(&self) -> bool {
        self.t0.as_constant().is_some() && self.ts.iter().all(|t| t.as_constant().is_some())
    }

    /// Declared Lipschitz constants `(rho_0, [rho_i])` of an autonomous
    /// problem, when every operator declares one.
    pub fn declared_rates(&self) -> Option<(f64, Vec<f64>)> {
        let r0 = self.t0.as_constant()?.lipschitz()?;
        let rs = self
            .ts
            .iter()
            .map(|t| t.as_constant().and_then(AveragedOp::lipschitz))
            .collect::<Option<Vec<_>>>()?;
        Some((r0, rs))
    }

    /// `||x - T_{0,n}(sum_i w_i T_{i,n} x)||`
    pub fn residual_at(&self, x: &Point, n: usize) -> Result<f64, SolverError> {
        let t0 = self.t0.at(n);
        let ts: Vec<AveragedOp> = self.ts.iter().map(|t| t.at(n)).collect();
        fixed_point_residual(x, &t0, &ts, &self.weights)
    }
}

/// `||x - T_0(sum_i w_i T_i x)||`, which vanishes exactly at solutions.
pub fn fixed_point_residual(
    x: &Point,
    t0: &AveragedOp,
    ts: &[AveragedOp],
    weights: &Weights,
) -> Result<f64, SolverError> {
    if ts.len() != weights.len() {
        return Err(SolverError::CountMismatch {
            expected: weights.len(),
            got: ts.len(),
        });
    }
    let images = ts
        .iter()
        .map(|t| t.apply(x))
        .collect::<Result<Vec<_>, _>>()?;
    let avg = weighted_sum(
        x.dim(),
        weights.as_slice().iter().copied().zip(images.iter()),
    );
    let y = t0.apply(&avg)?;
    Ok(x.dist(&y))
}

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_CHECK_EVERY: usize = 10;
/// Residual tolerance for [`reference_solution`].
pub const REFERENCE_TOLERANCE: f64 = 1e-13;

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub schedule: BlockSchedule,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol_residual: f64,
    /// The residual is evaluated at steps divisible by this, and at
    /// `max_iters`.
    pub check_every: usize,
    /// Initial stale values `t_{i,-1}`; `x0` for every `i` when absent.
    pub t_init: Option<Vec<Point>>,
    pub error_model: Option<ErrorModel>,
    /// When set, every record carries its distance to this point.
    pub reference: Option<Point>,
    /// Worker threads used to evaluate an active block. `1` is serial.
    pub threads: usize,
    /// Keep every iterate in the trace (needed by the audits).
    pub record_iterates: bool,
}

impl SolverConfig {
    pub fn new(schedule: BlockSchedule) -> Self {
        SolverConfig {
            schedule,
            epsilon: DEFAULT_EPSILON,
            max_iters: 10_000,
            tol_residual: 1e-10,
            check_every: DEFAULT_CHECK_EVERY,
            t_init: None,
            error_model: None,
            reference: None,
            threads: 1,
            record_iterates: false,
        }
    }

    pub fn max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol_residual = tol;
        self
    }

    pub fn check_every(mut self, every: usize) -> Self {
        self.check_every = every;
        self
    }

    pub fn errors(mut self, model: ErrorModel) -> Self {
        self.error_model = Some(model);
        self
    }

    pub fn reference(mut self, x: Point) -> Self {
        self.reference = Some(x);
        self
    }

    pub fn record_iterates(mut self, yes: bool) -> Self {
        self.record_iterates = yes;
        self
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn alpha_bound(&self) -> f64 {
        1.0 / (1.0 + self.epsilon)
    }
}

/// One step of a run. Records are written for `n = 0..N-1`, where a step
/// was taken, and once more for the final iterate `x_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub n: usize,
    /// Active block, 0-based and ascending. Empty on the final record.
    pub block: Vec<usize>,
    /// Fixed-point residual of `x_n`, when it was evaluated at this step.
    pub residual: Option<f64>,
    /// `||x_{n+1} - x_n||`; absent on the final record.
    pub step: Option<f64>,
    /// `||e_{0,n}||`
    pub err0: f64,
    /// `sum_{i in I_n} ||e_{i,n}||`
    pub errsum: f64,
    /// `||e_{i,n}||` aligned with `block`, when known.
    pub op_errors: Option<Vec<f64>>,
    /// `||x_n - x_ref||`
    pub dist_ref: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub k: usize,
    pub records: Vec<TraceRecord>,
    /// `x_0, ..., x_N` when iterates were recorded.
    pub iterates: Option<Vec<Point>>,
}

impl Trace {
    pub fn steps(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.step.is_some())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub solution: Point,
    pub trace: Trace,
    pub stop: StopReason,
    pub iterations: usize,
    pub final_residual: f64,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Recompute `sum_i w_i t_{i,n}` every step.
    Direct,
    /// Maintain the weighted sum incrementally.
    Economical,
}

/// A run in progress. Created by [`Solver::new`] and advanced with
/// [`Solver::step`]; [`run`] and [`run_economical`] drive it to completion.
pub struct Solver<'a> {
    problem: &'a SplittingProblem,
    cfg: &'a SolverConfig,
    variant: Variant,
    n: usize,
    x: Point,
    t: Vec<Point>,
    z: Option<Point>,
    trace: Trace,
    pool: Option<rayon::ThreadPool>,
}

fn check_alpha(op: &AveragedOp, bound: f64) -> Result<(), SolverError> {
    if op.alpha() >= bound {
        return Err(SolverError::AlphaTooLarge {
            label: op.label().to_string(),
            alpha: op.alpha(),
            bound,
        });
    }
    Ok(())
}

impl<'a> Solver<'a> {
    pub fn new(
        problem: &'a SplittingProblem,
        cfg: &'a SolverConfig,
        x0: Point,
        variant: Variant,
    ) -> Result<Self, SolverError> {
        if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
            return Err(SolverError::InvalidEpsilon(cfg.epsilon));
        }
        if cfg.check_every == 0 {
            return Err(SolverError::InvalidConfig("check_every must be positive".into()));
        }
        if cfg.schedule.m() != problem.m() {
            return Err(SolverError::CountMismatch {
                expected: problem.m(),
                got: cfg.schedule.m(),
            });
        }
        if x0.dim() != problem.dim() {
            return Err(SolverError::DimensionMismatch {
                expected: problem.dim(),
                got: x0.dim(),
            });
        }
        if !x0.is_finite() {
            return Err(SolverError::NonFinite { n: 0 });
        }
        if let Some(r) = &cfg.reference {
            if r.dim() != problem.dim() {
                return Err(SolverError::DimensionMismatch {
                    expected: problem.dim(),
                    got: r.dim(),
                });
            }
        }
        let bound = cfg.alpha_bound();
        if let Some(op) = problem.t0.as_constant() {
            check_alpha(op, bound)?;
        }
        for op in problem.ts.iter().filter_map(OperatorFamily::as_constant) {
            check_alpha(op, bound)?;
        }
        if !cfg.schedule.covers_by_construction() {
            validate_covering(&cfg.schedule, cfg.max_iters.max(cfg.schedule.k()))?;
        }

        let t = match &cfg.t_init {
            None => vec![x0.clone(); problem.m()],
            Some(t) => {
                if t.len() != problem.m() {
                    return Err(SolverError::CountMismatch {
                        expected: problem.m(),
                        got: t.len(),
                    });
                }
                if let Some(bad) = t.iter().find(|p| p.dim() != problem.dim()) {
                    return Err(SolverError::DimensionMismatch {
                        expected: problem.dim(),
                        got: bad.dim(),
                    });
                }
                if t.iter().any(|p| !p.is_finite()) {
                    return Err(SolverError::NonFinite { n: 0 });
                }
                t.clone()
            }
        };
        let z = match variant {
            Variant::Direct => None,
            Variant::Economical => Some(weighted_sum(
                problem.dim(),
                problem.weights.as_slice().iter().copied().zip(t.iter()),
            )),
        };
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| SolverError::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };
        let iterates = cfg.record_iterates.then(|| vec![x0.clone()]);
        Ok(Solver {
            problem,
            cfg,
            variant,
            n: 0,
            x: x0,
            t,
            z,
            trace: Trace {
                k: cfg.schedule.k(),
                records: Vec::new(),
                iterates,
            },
            pool,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> &Point {
        &self.x
    }

    /// The stale values `t_{i,n-1}` as of the current step.
    pub fn t_buffer(&self) -> &[Point] {
        &self.t
    }

    /// The running sum `sum_i w_i t_{i,n-1}` (economical variant only).
    pub fn z_running(&self) -> Option<&Point> {
        self.z.as_ref()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Residual of the current iterate.
    pub fn residual(&self) -> Result<f64, SolverError> {
        let t0 = self.problem.t0.at(self.n);
        let ts: Vec<AveragedOp> = self.problem.ts.iter().map(|t| t.at(self.n)).collect();
        let bound = self.cfg.alpha_bound();
        check_alpha(&t0, bound)?;
        let images = self.eval_many(&ts)?;
        let avg = weighted_sum(
            self.x.dim(),
            self.problem.weights.as_slice().iter().copied().zip(images.iter()),
        );
        let y = t0.apply(&avg)?;
        Ok(self.x.dist(&y))
    }

    /// Evaluates every operator at the current iterate, in parallel when a
    /// pool is configured. Output order follows `ops`.
    fn eval_many(&self, ops: &[AveragedOp]) -> Result<Vec<Point>, SolverError> {
        let x = &self.x;
        let eval = |op: &AveragedOp| op.apply(x);
        let out: Result<Vec<Point>, OperatorError> = match &self.pool {
            Some(pool) if ops.len() > 1 => pool.install(|| ops.par_iter().map(eval).collect()),
            _ => ops.iter().map(eval).collect(),
        };
        out.map_err(|e| match e {
            OperatorError::NonFiniteOutput { .. } => SolverError::NonFinite { n: self.n },
            other => SolverError::Operator(other),
        })
    }

    fn dist_ref(&self) -> Option<f64> {
        self.cfg.reference.as_ref().map(|r| self.x.dist(r))
    }

    /// Advances from `x_n` to `x_{n+1}`, recording the step with the given
    /// residual of `x_n` when one was evaluated.
    pub fn step_with(&mut self, residual: Option<f64>) -> Result<&TraceRecord, SolverError> {
        let n = self.n;
        let dim = self.problem.dim();
        let w = self.problem.weights.as_slice();
        let bound = self.cfg.alpha_bound();
        let block = self.cfg.schedule.block(n);

        let mut ops = Vec::with_capacity(block.len());
        for &i in block.iter() {
            let fam = &self.problem.ts[i];
            let op = fam.at(n);
            if fam.as_constant().is_none() {
                check_alpha(&op, bound)?;
            }
            ops.push(op);
        }
        let mut fresh = self.eval_many(&ops)?;

        let mut op_errors = Vec::with_capacity(block.len());
        if let Some(em) = &self.cfg.error_model {
            for (slot, &i) in fresh.iter_mut().zip(block.iter()) {
                match em.block(i, n, dim) {
                    Some(e) => {
                        op_errors.push(e.norm());
                        *slot = slot.add(&e);
                    }
                    None => op_errors.push(0.0),
                }
            }
        } else {
            op_errors.resize(block.len(), 0.0);
        }

        let avg = match self.variant {
            Variant::Direct => {
                for (p, &i) in fresh.into_iter().zip(block.iter()) {
                    self.t[i] = p;
                }
                weighted_sum(dim, w.iter().copied().zip(self.t.iter()))
            }
            Variant::Economical => {
                let z_prev = self.z.take().expect("economical state");
                let z = if self.cfg.schedule.is_full_activation() || block.len() == self.problem.m() {
                    for (p, &i) in fresh.into_iter().zip(block.iter()) {
                        self.t[i] = p;
                    }
                    weighted_sum(dim, w.iter().copied().zip(self.t.iter()))
                } else {
                    let stale = block.iter().map(|&i| (-w[i], &self.t[i]));
                    let y = weighted_sum(
                        dim,
                        std::iter::once((1.0, &z_prev)).chain(stale),
                    );
                    let z = weighted_sum(
                        dim,
                        std::iter::once((1.0, &y))
                            .chain(block.iter().zip(fresh.iter()).map(|(&i, p)| (w[i], p))),
                    );
                    for (p, &i) in fresh.into_iter().zip(block.iter()) {
                        self.t[i] = p;
                    }
                    z
                };
                self.z = Some(z.clone());
                z
            }
        };

        let t0 = self.problem.t0.at(n);
        if self.problem.t0.as_constant().is_none() {
            check_alpha(&t0, bound)?;
        }
        let mut next = t0.apply(&avg).map_err(|e| match e {
            OperatorError::NonFiniteOutput { .. } => SolverError::NonFinite { n },
            other => SolverError::Operator(other),
        })?;
        let mut err0 = 0.0;
        if let Some(e) = self.cfg.error_model.as_ref().and_then(|em| em.outer(n, dim)) {
            err0 = e.norm();
            next = next.add(&e);
        }
        if !next.is_finite() {
            return Err(SolverError::NonFinite { n: n + 1 });
        }

        let record = TraceRecord {
            n,
            block: block.to_vec(),
            residual,
            step: Some(next.dist(&self.x)),
            err0,
            errsum: op_errors.iter().sum(),
            op_errors: Some(op_errors),
            dist_ref: self.dist_ref(),
        };
        self.x = next;
        self.n += 1;
        if let Some(its) = &mut self.trace.iterates {
            its.push(self.x.clone());
        }
        self.trace.records.push(record);
        Ok(self.trace.records.last().expect("just pushed"))
    }

    pub fn step(&mut self) -> Result<&TraceRecord, SolverError> {
        self.step_with(None)
    }

    /// Runs until the residual test passes or `max_iters` steps were taken.
    pub fn finish(mut self) -> Result<RunOutcome, SolverError> {
        loop {
            let n = self.n;
            let due = n.is_multiple_of(self.cfg.check_every) || n >= self.cfg.max_iters;
            let residual = if due { Some(self.residual()?) } else { None };
            let stop = match residual {
                Some(r) if r <= self.cfg.tol_residual => Some(StopReason::Converged),
                _ if n >= self.cfg.max_iters => Some(StopReason::MaxIters),
                _ => None,
            };
            if let Some(stop) = stop {
                let final_residual = residual.expect("evaluated when stopping");
                let record = TraceRecord {
                    n,
                    block: Vec::new(),
                    residual,
                    step: None,
                    err0: 0.0,
                    errsum: 0.0,
                    op_errors: None,
                    dist_ref: self.dist_ref(),
                };
                self.trace.records.push(record);
                return Ok(RunOutcome {
                    solution: self.x,
                    trace: self.trace,
                    stop,
                    iterations: n,
                    final_residual,
                });
            }
            self.step_with(residual)?;
        }
    }
}

/// Runs the block iteration, recomputing the weighted sum every step.
pub fn run(problem: &SplittingProblem, cfg: &SolverConfig, x0: Point) -> Result<RunOutcome, SolverError> {
    Solver::new(problem, cfg, x0, Variant::Direct)?.finish()
}

/// Runs the block iteration, updating the weighted sum only on the active
/// block.
pub fn run_economical(
    problem: &SplittingProblem,
    cfg: &SolverConfig,
    x0: Point,
) -> Result<RunOutcome, SolverError> {
    Solver::new(problem, cfg, x0, Variant::Economical)?.finish()
}

/// A high-accuracy solution from a long full-activation, error-free run.
/// Returns the point and its residual.
pub fn reference_solution(
    problem: &SplittingProblem,
    x0: Point,
    max_iters: usize,
) -> Result<(Point, f64), SolverError> {
    let cfg = SolverConfig::new(BlockSchedule::full(problem.m())?)
        .max_iters(max_iters)
        .tol(REFERENCE_TOLERANCE);
    let out = run(problem, &cfg, x0)?;
    Ok((out.solution, out.final_residual))
}
