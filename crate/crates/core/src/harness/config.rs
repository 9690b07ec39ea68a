use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::read_regression_csv;
use super::HarnessError;
use crate::calculus::{ConvexSet, DistancePenalty, LinearMap, SmoothScalar};
use crate::operators::{AveragedOp, Point, Weights};
use crate::problems::{
    affine_resolvent_fn, alternating_projections, build_cohypomonotone, build_common_fixed_point,
    build_feasibility_relaxation, build_forward_backward, build_residual_system, resolvent_of_affine,
    resolvent_of_l1, resolvent_of_normal_cone, resolvent_of_zero, Cocoercive, LeastSquares, Loss,
    OuterResolvent, SparseRegression, StepSchedule,
};
use crate::schedules::BlockSchedule;
use crate::solver::{ErrorModel, SolverConfig, SplittingProblem, DEFAULT_CHECK_EVERY, DEFAULT_EPSILON};

/// Environment variable capping the worker threads of a run.
pub const THREADS_ENV: &str = "BLOCKSPLIT_THREADS";

/// A complete experiment as read from JSON. Relative paths resolve against
/// the directory of the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub errors: Option<ErrorConfig>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Used by every random component that does not name its own seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Operator count stated in the schedule object, checked against the
    /// problem when the schedule is built.
    #[serde(skip)]
    pub schedule_m: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInstance {
    pub dim: usize,
    pub m: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Lasso {
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default)]
        random: Option<RandomInstance>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Logistic {
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default)]
        random: Option<RandomInstance>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    LeastSquares {
        #[serde(default)]
        data: Option<PathBuf>,
        #[serde(default)]
        random: Option<RandomInstance>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    FeasibilityRelaxation {
        c0: SetSpec,
        terms: Vec<TermSpec>,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    AlternatingProjections {
        c: SetSpec,
        d: SetSpec,
    },
    CommonFixedPoint {
        sets: Vec<SetSpec>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    ResidualSystem {
        /// Firmly nonexpansive matrices `R_i`, row-major.
        matrices: Vec<Vec<Vec<f64>>>,
        targets: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    #[serde(alias = "prox_grad")]
    ForwardBackward {
        outer: OuterSpec,
        operators: Vec<AffineSpec>,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Cohypomonotone {
        operators: Vec<AffineSpec>,
        rhos: Vec<f64>,
        gammas: Vec<f64>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
}

/// `{"set": "ball", "center": [0, 0], "radius": 1}` and friends.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Space { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    NonnegativeOrthant { dim: usize },
    Halfspace { normal: Vec<f64>, offset: f64 },
    Hyperplane { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Affine { rows: Vec<Vec<f64>>, rhs: Vec<f64> },
    Singleton { point: Vec<f64> },
}

impl SetSpec {
    pub fn build(&self) -> Result<ConvexSet, HarnessError> {
        let set = match self {
            SetSpec::Space { dim } => {
                if *dim == 0 {
                    return Err(HarnessError::Config("space needs dim >= 1".into()));
                }
                Ok(ConvexSet::space(*dim))
            }
            SetSpec::Box { lower, upper } => ConvexSet::boxed(lower.clone(), upper.clone()),
            SetSpec::NonnegativeOrthant { dim } => {
                if *dim == 0 {
                    return Err(HarnessError::Config("orthant needs dim >= 1".into()));
                }
                Ok(ConvexSet::nonnegative_orthant(*dim))
            }
            SetSpec::Halfspace { normal, offset } => ConvexSet::halfspace(Point::from(normal.clone()), *offset),
            SetSpec::Hyperplane { normal, offset } => ConvexSet::hyperplane(Point::from(normal.clone()), *offset),
            SetSpec::Ball { center, radius } => ConvexSet::ball(Point::from(center.clone()), *radius),
            SetSpec::Affine { rows, rhs } => ConvexSet::affine(rows, rhs.clone()),
            SetSpec::Singleton { point } => ConvexSet::singleton(Point::from(point.clone())),
        };
        set.map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// The scalar function of a distance penalty: `"half_square"`, `"square"`,
/// `"log_cosh"` or `{"huber": delta}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSpec {
    HalfSquare,
    Square,
    LogCosh,
    Huber(f64),
}

impl PhiSpec {
    fn build(&self) -> Result<SmoothScalar, HarnessError> {
        Ok(match self {
            PhiSpec::HalfSquare => SmoothScalar::half_square(),
            PhiSpec::Square => SmoothScalar::square(),
            PhiSpec::LogCosh => SmoothScalar::log_cosh(),
            PhiSpec::Huber(delta) => {
                if !(*delta > 0.0) || !delta.is_finite() {
                    return Err(HarnessError::Config(format!("huber delta {delta} must be positive")));
                }
                SmoothScalar::huber(*delta)
            }
        })
    }
}

/// `"identity"` or a row-major matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Named(String),
    Rows(Vec<Vec<f64>>),
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec::Named("identity".into())
    }
}

impl MapSpec {
    fn build(&self, dim: usize) -> Result<LinearMap, HarnessError> {
        match self {
            MapSpec::Named(name) if name == "identity" => Ok(LinearMap::identity(dim)),
            MapSpec::Named(name) => Err(HarnessError::Config(format!("unknown linear map {name:?}"))),
            MapSpec::Rows(rows) => LinearMap::from_rows(rows).map_err(|e| HarnessError::Config(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub phi: PhiSpec,
    #[serde(default)]
    pub map: MapSpec,
    pub set: SetSpec,
}

/// The outer operator of a forward-backward problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OuterSpec {
    Zero,
    L1 { alpha: f64 },
    NormalCone { set: SetSpec },
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
}

/// `x -> M x + c`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, HarnessError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(HarnessError::Config("matrix rows must be nonempty and of equal length".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HarnessError::Config("matrix entries must be finite".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl AffineSpec {
    fn parts(&self) -> Result<(DMatrix<f64>, DVector<f64>), HarnessError> {
        let m = matrix_from_rows(&self.matrix)?;
        if !m.is_square() {
            return Err(HarnessError::Config("affine operator matrix must be square".into()));
        }
        let c = match &self.offset {
            None => DVector::zeros(m.nrows()),
            Some(v) if v.len() == m.nrows() && v.iter().all(|x| x.is_finite()) => DVector::from_column_slice(v),
            Some(v) => {
                return Err(HarnessError::Config(format!(
                    "offset of length {} does not match a {}x{} matrix",
                    v.len(),
                    m.nrows(),
                    m.ncols()
                )))
            }
        };
        Ok((m, c))
    }

    /// A symmetric positive semidefinite `M` gives a `1/lambda_max`
    /// cocoercive map, strongly monotone when `lambda_min > 0`.
    fn cocoercive(&self, index: usize) -> Result<Cocoercive, HarnessError> {
        let (m, c) = self.parts()?;
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * (1.0 + m.amax()) {
            return Err(HarnessError::Config(format!("operator {} must be a symmetric matrix", index + 1)));
        }
        let eig = m.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo < -1e-10 * (1.0 + hi.abs()) {
            return Err(HarnessError::Config(format!(
                "operator {} is not monotone (eigenvalue {lo})",
                index + 1
            )));
        }
        let dim = m.nrows();
        if hi <= 0.0 {
            return Ok(Cocoercive::constant(Point::from(c.as_slice())).with_label(&format!("A{}", index + 1)));
        }
        let op = Cocoercive::new(dim, 1.0 / hi, move |x: &Point| {
            let v = &m * DVector::from_column_slice(x.as_slice()) + &c;
            Point::from(v.as_slice())
        })
        .map_err(HarnessError::Problem)?
        .with_label(&format!("A{}", index + 1));
        if lo > 1e-12 * hi {
            op.with_strong_monotonicity(lo).map_err(HarnessError::Problem)
        } else {
            Ok(op)
        }
    }
}

/// Block selection. Explicit blocks use 1-based operator indices.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    #[default]
    Full,
    Cyclic {
        block_size: usize,
        /// Declared covering constant; defaults to `ceil(m / block_size)`.
        #[serde(default, alias = "K")]
        k: Option<usize>,
    },
    Quasicyclic {
        #[serde(alias = "K")]
        k: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Explicit {
        blocks: Vec<Vec<usize>>,
        #[serde(alias = "K")]
        k: usize,
    },
}

impl ScheduleConfig {
    pub fn build(&self, m: usize, seed: u64) -> Result<BlockSchedule, HarnessError> {
        let schedule = match self {
            ScheduleConfig::Full => BlockSchedule::full(m),
            ScheduleConfig::Cyclic { block_size, k } => {
                let s = BlockSchedule::cyclic(m, *block_size);
                match k {
                    Some(k) => s.and_then(|s| s.with_covering_constant(*k)),
                    None => s,
                }
            }
            ScheduleConfig::Quasicyclic { k, seed: own } => BlockSchedule::quasicyclic_random(m, *k, own.unwrap_or(seed)),
            ScheduleConfig::Explicit { blocks, k } => {
                let mut zero_based = Vec::with_capacity(blocks.len());
                for b in blocks {
                    if b.contains(&0) {
                        return Err(HarnessError::Config("block indices are 1-based".into()));
                    }
                    zero_based.push(b.iter().map(|i| i - 1).collect());
                }
                BlockSchedule::explicit(m, zero_based, *k)
            }
        };
        schedule.map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    #[default]
    Direct,
    Economical,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub check_every: usize,
    pub threads: Option<usize>,
    pub variant: VariantName,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            epsilon: DEFAULT_EPSILON,
            tol: 1e-10,
            max_iters: 10_000,
            check_every: DEFAULT_CHECK_EVERY,
            threads: None,
            variant: VariantName::Direct,
        }
    }
}

/// Injected errors of norm `scale / (n + 1)^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorConfig {
    pub scale: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "yes")]
    pub outer: bool,
    #[serde(default = "yes")]
    pub blocks: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub enabled: bool,
    /// Iteration cap of the full-activation reference run.
    pub reference_iters: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            enabled: true,
            reference_iters: 200_000,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

/// Combines a configured thread count with the value of [`THREADS_ENV`].
pub fn resolve_threads(configured: Option<usize>, env: Option<&str>) -> Result<usize, HarnessError> {
    let cap = env
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| HarnessError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))
        })
        .transpose()?;
    Ok(match (configured, cap) {
        (Some(t), Some(cap)) => t.min(cap),
        (Some(t), None) => t,
        (None, Some(cap)) => cap,
        (None, None) => 1,
    })
}

/// A problem ready for the solver, with what the summary reports about it.
pub struct BuiltProblem {
    pub problem: SplittingProblem,
    pub gamma: Option<f64>,
    pub objective: Option<Objective>,
}

pub type Objective = Box<dyn Fn(&Point) -> f64>;

/// Regression rows and targets, or the random instance to draw instead.
type RegressionSource = Result<(Vec<Point>, Vec<f64>), RandomInstance>;

fn weights_of(w: &Option<Vec<f64>>) -> Result<Option<Weights>, HarnessError> {
    w.as_ref()
        .map(|v| Weights::new(v.clone()).map_err(|e| HarnessError::Config(e.to_string())))
        .transpose()
}

fn check_step(gamma: Option<f64>) -> Result<(), HarnessError> {
    match gamma {
        Some(g) if !(g > 0.0) || !g.is_finite() => Err(HarnessError::Config(format!("gamma {g} must be positive"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let parse = |e: serde_json::Error| HarnessError::Config(format!("config: {e}"));
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(parse)?;
        let mut schedule_m = None;
        if let Some(schedule) = value.get_mut("schedule").and_then(serde_json::Value::as_object_mut) {
            if !schedule.contains_key("kind") {
                if let Some(t) = schedule.remove("type") {
                    schedule.insert("kind".into(), t);
                }
            }
            if let Some(m) = schedule.remove("m") {
                let m = m
                    .as_u64()
                    .ok_or_else(|| HarnessError::Config("schedule m must be a positive integer".into()))?;
                schedule_m = Some(m as usize);
            }
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(parse)?;
        cfg.schedule_m = schedule_m;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Range checks that need no data and allocate nothing.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let s = &self.solver;
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
            return bad(format!("epsilon {} must lie in (0, 1)", s.epsilon));
        }
        if !(s.tol >= 0.0) || !s.tol.is_finite() {
            return bad(format!("tol {} must be finite and nonnegative", s.tol));
        }
        if s.max_iters == 0 || s.check_every == 0 {
            return bad("max_iters and check_every must be positive".into());
        }
        if s.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let Some(e) = &self.errors {
            if !(e.scale >= 0.0) || !e.scale.is_finite() {
                return bad(format!("error scale {} must be finite and nonnegative", e.scale));
            }
        }
        if self.audit.enabled && self.audit.reference_iters == 0 {
            return bad("audit.reference_iters must be positive".into());
        }
        if let Some(x0) = &self.x0 {
            if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
                return bad("x0 must be a nonempty finite vector".into());
            }
        }
        if let Some(path) = self.data_path() {
            let full = self.resolve(path);
            if !full.is_file() {
                return Err(HarnessError::Io {
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "data file not found"),
                    path: full,
                });
            }
        }
        Ok(())
    }

    fn data_path(&self) -> Option<&Path> {
        match &self.problem {
            ProblemConfig::Lasso { data, .. }
            | ProblemConfig::Logistic { data, .. }
            | ProblemConfig::LeastSquares { data, .. } => data.as_deref(),
            _ => None,
        }
    }

    fn regression_data(
        &self,
        data: &Option<PathBuf>,
        random: &Option<RandomInstance>,
    ) -> Result<RegressionSource, HarnessError> {
        match (data, random) {
            (Some(path), None) => Ok(Ok(read_regression_csv(&self.resolve(path))?)),
            (None, Some(r)) => {
                if r.dim == 0 || r.m == 0 {
                    return Err(HarnessError::Config("random instances need dim, m >= 1".into()));
                }
                Ok(Err(RandomInstance {
                    seed: Some(r.seed.unwrap_or(self.seed)),
                    ..r.clone()
                }))
            }
            _ => Err(HarnessError::Config("give exactly one of \"data\" and \"random\"".into())),
        }
    }

    fn sparse_regression(
        &self,
        loss: Loss,
        data: &Option<PathBuf>,
        random: &Option<RandomInstance>,
        alpha: Option<f64>,
    ) -> Result<SparseRegression, HarnessError> {
        let inst = match self.regression_data(data, random)? {
            Ok((rows, targets)) => {
                SparseRegression::new(rows, targets, 0.0, loss).map_err(|e| HarnessError::Data(e.to_string()))?
            }
            Err(r) => {
                let seed = r.seed.expect("filled");
                match loss {
                    Loss::Squared => SparseRegression::lasso_random(r.dim, r.m, seed),
                    Loss::Logistic => SparseRegression::logistic_random(r.dim, r.m, seed),
                }
            }
        };
        let alpha = match (alpha, data) {
            (Some(a), _) => a,
            (None, None) => inst.alpha(),
            (None, Some(_)) => match loss {
                Loss::Squared => crate::problems::LASSO_ALPHA,
                Loss::Logistic => crate::problems::LOGISTIC_ALPHA,
            },
        };
        inst.with_alpha(alpha).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Builds the problem, reading data files as needed.
    pub fn build_problem(&self) -> Result<BuiltProblem, HarnessError> {
        let p = |e: crate::problems::ProblemError| HarnessError::from(e);
        Ok(match &self.problem {
            ProblemConfig::Lasso {
                data,
                random,
                alpha,
                gamma,
            }
            | ProblemConfig::Logistic {
                data,
                random,
                alpha,
                gamma,
            } => {
                check_step(*gamma)?;
                let loss = if matches!(self.problem, ProblemConfig::Lasso { .. }) {
                    Loss::Squared
                } else {
                    Loss::Logistic
                };
                let inst = self.sparse_regression(loss, data, random, *alpha)?;
                let (problem, g) = inst.build(*gamma).map_err(p)?;
                BuiltProblem {
                    problem,
                    gamma: Some(g),
                    objective: Some(Box::new(move |x| inst.objective(x))),
                }
            }
            ProblemConfig::LeastSquares { data, random, gamma } => {
                check_step(*gamma)?;
                let inst = match self.regression_data(data, random)? {
                    Ok((rows, targets)) => {
                        LeastSquares::new(rows, targets).map_err(|e| HarnessError::Data(e.to_string()))?
                    }
                    Err(r) => LeastSquares::random_unit(r.dim, r.m, r.seed.expect("filled")),
                };
                let (problem, g) = inst.build(*gamma).map_err(p)?;
                BuiltProblem {
                    problem,
                    gamma: Some(g),
                    objective: Some(Box::new(move |x| inst.objective(x))),
                }
            }
            ProblemConfig::FeasibilityRelaxation {
                c0,
                terms,
                gamma,
                weights,
            } => {
                check_step(*gamma)?;
                let c0 = c0.build()?;
                let mut built = Vec::with_capacity(terms.len());
                for t in terms {
                    let pen = DistancePenalty::new(t.phi.build()?, t.map.build(c0.dim())?, t.set.build()?)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    built.push(pen);
                }
                let objective_terms = built.clone();
                let w = weights_of(weights)?;
                let wv = w.clone().unwrap_or_else(|| Weights::uniform(built.len().max(1)));
                let (problem, g) = build_feasibility_relaxation(&c0, built, *gamma, w).map_err(p)?;
                BuiltProblem {
                    problem,
                    gamma: Some(g),
                    objective: Some(Box::new(move |x| {
                        objective_terms
                            .iter()
                            .zip(wv.as_slice())
                            .map(|(t, w)| w * t.value(x))
                            .sum()
                    })),
                }
            }
            ProblemConfig::AlternatingProjections { c, d } => BuiltProblem {
                problem: alternating_projections(&c.build()?, &d.build()?).map_err(p)?,
                gamma: Some(1.0),
                objective: None,
            },
            ProblemConfig::CommonFixedPoint { sets, weights } => {
                let ops = sets
                    .iter()
                    .map(|s| s.build().map(|s| crate::calculus::projector(&s)))
                    .collect::<Result<Vec<_>, _>>()?;
                BuiltProblem {
                    problem: build_common_fixed_point(ops, weights_of(weights)?).map_err(p)?,
                    gamma: None,
                    objective: None,
                }
            }
            ProblemConfig::ResidualSystem {
                matrices,
                targets,
                weights,
            } => {
                let mut ops = Vec::with_capacity(matrices.len());
                for (i, rows) in matrices.iter().enumerate() {
                    let m = matrix_from_rows(rows)?;
                    if !m.is_square() {
                        return Err(HarnessError::Config(format!("matrix {} must be square", i + 1)));
                    }
                    let op = AveragedOp::new(m.nrows(), 0.5, move |x: &Point| {
                        Point::from((&m * DVector::from_column_slice(x.as_slice())).as_slice())
                    })
                    .map_err(|e| HarnessError::Config(e.to_string()))?
                    .with_label(format!("R{}", i + 1));
                    ops.push(op);
                }
                let targets = targets.iter().map(|t| Point::from(t.clone())).collect();
                BuiltProblem {
                    problem: build_residual_system(ops, targets, weights_of(weights)?).map_err(p)?,
                    gamma: None,
                    objective: None,
                }
            }
            ProblemConfig::ForwardBackward {
                outer,
                operators,
                gamma,
                weights,
            } => {
                check_step(*gamma)?;
                let a = operators
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.cocoercive(i))
                    .collect::<Result<Vec<_>, _>>()?;
                let dim = a.first().map(Cocoercive::dim).ok_or_else(|| HarnessError::Config("no operators".into()))?;
                let a0: OuterResolvent = match outer {
                    OuterSpec::Zero => resolvent_of_zero(dim),
                    OuterSpec::L1 { alpha } => {
                        if !(*alpha >= 0.0) || !alpha.is_finite() {
                            return Err(HarnessError::Config(format!("l1 weight {alpha} must be nonnegative")));
                        }
                        resolvent_of_l1(dim, *alpha)
                    }
                    OuterSpec::NormalCone { set } => resolvent_of_normal_cone(set.build()?),
                    OuterSpec::Linear { matrix, offset } => {
                        let (m, c) = AffineSpec {
                            matrix: matrix.clone(),
                            offset: offset.clone(),
                        }
                        .parts()?;
                        resolvent_of_affine(m, c)
                    }
                };
                let (problem, g) = build_forward_backward(a0, a, *gamma, weights_of(weights)?).map_err(p)?;
                BuiltProblem {
                    problem,
                    gamma: Some(g),
                    objective: None,
                }
            }
            ProblemConfig::Cohypomonotone {
                operators,
                rhos,
                gammas,
                weights,
            } => {
                let mut resolvents = Vec::with_capacity(operators.len());
                let mut dim = 0;
                for s in operators {
                    let (m, c) = s.parts()?;
                    dim = m.nrows();
                    resolvents.push(affine_resolvent_fn(m, c).map_err(p)?);
                }
                let steps = gammas.iter().map(|g| StepSchedule::Constant(*g)).collect();
                BuiltProblem {
                    problem: build_cohypomonotone(
                        dim,
                        resolvents,
                        rhos.clone(),
                        steps,
                        weights_of(weights)?,
                        self.solver.epsilon,
                        self.solver.max_iters,
                    )
                    .map_err(p)?,
                    gamma: None,
                    objective: None,
                }
            }
        })
    }

    /// Worker threads: the configured count (or the environment's when
    /// none is configured), capped by [`THREADS_ENV`] when set.
    pub fn threads(&self) -> Result<usize, HarnessError> {
        resolve_threads(self.solver.threads, std::env::var(THREADS_ENV).ok().as_deref())
    }

    pub fn solver_config(&self, schedule: BlockSchedule) -> Result<SolverConfig, HarnessError> {
        let s = &self.solver;
        let mut cfg = SolverConfig::new(schedule)
            .max_iters(s.max_iters)
            .tol(s.tol)
            .check_every(s.check_every)
            .threads(self.threads()?);
        cfg.epsilon = s.epsilon;
        if let Some(e) = &self.errors {
            let mut model = ErrorModel::new(e.seed.unwrap_or(self.seed), e.scale);
            model.perturb_outer = e.outer;
            model.perturb_blocks = e.blocks;
            cfg = cfg.errors(model);
        }
        Ok(cfg)
    }
}
