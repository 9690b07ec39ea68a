//! Builders that turn concrete problem classes into a [`SplittingProblem`]
//! whose fixed points are the problem's solutions.

mod instances;

use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::calculus::{
    projector, prox_l1_op, CalculusError, ConvexSet, DistancePenalty, LinearMap, LinearResolvent,
    SmoothScalar,
};
use crate::operators::{certify_averaged, AveragedOp, OperatorError, Point, Weights};
use crate::solver::{OperatorFamily, SolverError, SplittingProblem};

pub use instances::{LeastSquares, Loss, SparseRegression, LASSO_ALPHA, LOGISTIC_ALPHA};

/// Sample count and seed used to certify caller-supplied operators.
pub const BUILD_CERTIFY_SAMPLES: usize = 500;
pub const BUILD_CERTIFY_SEED: u64 = 0x5eed;
/// Default step as a fraction of the admissible upper bound.
pub const DEFAULT_STEP_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("operator {index} ({label}) failed certification: worst violation {max_violation:e}")]
    NotCertified { index: usize, label: String, max_violation: f64 },
    #[error("operator {index} ({label}) declares alpha = {alpha}; a firmly nonexpansive operator is required")]
    NotFirm { index: usize, label: String, alpha: f64 },
    #[error("step {gamma} outside the admissible interval ({lower}, {upper})")]
    StepOutOfRange { gamma: f64, lower: f64, upper: f64 },
    #[error("expected {expected} entries, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
}

fn default_weights(m: usize, weights: Option<Weights>) -> Result<Weights, ProblemError> {
    match weights {
        None => Ok(Weights::uniform(m)),
        Some(w) if w.len() == m => Ok(w),
        Some(w) => Err(ProblemError::CountMismatch {
            expected: m,
            got: w.len(),
        }),
    }
}

fn certify_firm(index: usize, op: &AveragedOp) -> Result<(), ProblemError> {
    if op.alpha() > 0.5 {
        return Err(ProblemError::NotFirm {
            index,
            label: op.label().to_string(),
            alpha: op.alpha(),
        });
    }
    let cert = certify_averaged(op, BUILD_CERTIFY_SAMPLES, BUILD_CERTIFY_SEED.wrapping_add(index as u64));
    if !cert.passed {
        return Err(ProblemError::NotCertified {
            index,
            label: op.label().to_string(),
            max_violation: cert.max_scaled_violation,
        });
    }
    Ok(())
}

fn check_dims(ops: &[AveragedOp]) -> Result<usize, ProblemError> {
    let dim = ops.first().ok_or(OperatorError::Empty)?.dim();
    if let Some(bad) = ops.iter().find(|op| op.dim() != dim) {
        return Err(ProblemError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    Ok(dim)
}

fn pick_gamma(gamma: Option<f64>, upper: f64) -> Result<f64, ProblemError> {
    let g = gamma.unwrap_or(DEFAULT_STEP_FRACTION * upper);
    if !(g > 0.0 && g < upper) {
        return Err(ProblemError::StepOutOfRange {
            gamma: g,
            lower: 0.0,
            upper,
        });
    }
    Ok(g)
}

/// Common fixed points of firmly nonexpansive operators: `T_0 = Id`.
pub fn build_common_fixed_point(
    ts: Vec<AveragedOp>,
    weights: Option<Weights>,
) -> Result<SplittingProblem, ProblemError> {
    let dim = check_dims(&ts)?;
    for (i, op) in ts.iter().enumerate() {
        certify_firm(i, op)?;
    }
    let w = default_weights(ts.len(), weights)?;
    Ok(SplittingProblem::autonomous(AveragedOp::identity(dim), ts, w)?)
}

/// `(gamma, x) -> J_{gamma A} x`
pub type ResolventFn = Arc<dyn Fn(f64, &Point) -> Point + Send + Sync>;

/// A resolvent step size that is either fixed or indexed by the iteration.
#[derive(Clone)]
pub enum StepSchedule {
    Constant(f64),
    Varying(Arc<dyn Fn(usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Constant(g) => write!(f, "Constant({g})"),
            StepSchedule::Varying(_) => write!(f, "Varying"),
        }
    }
}

impl StepSchedule {
    pub fn at(&self, n: usize) -> f64 {
        match self {
            StepSchedule::Constant(g) => *g,
            StepSchedule::Varying(f) => f(n),
        }
    }
}

/// Resolvent of the affine map `x -> M x + c`, refactored only when the
/// step changes. `M` need not be monotone, so this also serves
/// cohypomonotone linear maps.
pub fn affine_resolvent_fn(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<ResolventFn, ProblemError> {
    let dim = matrix.nrows();
    if !matrix.is_square() || offset.len() != dim {
        return Err(ProblemError::InvalidData("affine map must be square".into()));
    }
    type Factored = (f64, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>);
    let cache: Mutex<Option<Factored>> = Mutex::new(None);
    Ok(Arc::new(move |gamma: f64, x: &Point| {
        let mut guard = cache.lock().expect("resolvent cache poisoned");
        let stale = guard.as_ref().is_none_or(|(g, _)| *g != gamma);
        if stale {
            let system = DMatrix::identity(dim, dim) + &matrix * gamma;
            *guard = Some((gamma, system.lu()));
        }
        let (_, lu) = guard.as_ref().expect("filled above");
        let rhs = DVector::from_column_slice(x.as_slice()) - &offset * gamma;
        match lu.solve(&rhs) {
            Some(v) => Point::from(v.as_slice()),
            None => Point::filled(dim, f64::NAN),
        }
    }))
}

/// Zeros of a sum of cohypomonotone operators through relaxed resolvents
/// `T_{i,n} = Id + (1 - rho_i/gamma_{i,n}) (J_{gamma_{i,n} A_i} - Id)`.
///
/// The maximal cohypomonotonicity of each `A_i` is the caller's
/// responsibility. Varying steps are checked against `gamma >= rho + epsilon`
/// for the first `horizon` iterations.
pub fn build_cohypomonotone(
    dim: usize,
    resolvents: Vec<ResolventFn>,
    rhos: Vec<f64>,
    gammas: Vec<StepSchedule>,
    weights: Option<Weights>,
    epsilon: f64,
    horizon: usize,
) -> Result<SplittingProblem, ProblemError> {
    let m = resolvents.len();
    if m == 0 {
        return Err(OperatorError::Empty.into());
    }
    for len in [rhos.len(), gammas.len()] {
        if len != m {
            return Err(ProblemError::CountMismatch { expected: m, got: len });
        }
    }
    if let Some(&r) = rhos.iter().find(|r| !(**r >= 0.0)) {
        return Err(ProblemError::InvalidData(format!("rho = {r} must be nonnegative")));
    }
    for (i, g) in gammas.iter().enumerate() {
        let steps = match g {
            StepSchedule::Constant(_) => 1,
            StepSchedule::Varying(_) => horizon.max(1),
        };
        for n in 0..steps {
            let gamma = g.at(n);
            if !(gamma >= rhos[i] + epsilon) || !gamma.is_finite() {
                return Err(ProblemError::StepOutOfRange {
                    gamma,
                    lower: rhos[i] + epsilon,
                    upper: f64::INFINITY,
                });
            }
        }
    }
    let w = default_weights(m, weights)?;
    let make = move |j: ResolventFn, rho: f64, gamma: f64, label: String| {
        let lambda = 1.0 - rho / gamma;
        AveragedOp::new(dim, 0.5, move |x: &Point| x.lerp(&j(gamma, x), lambda))
            .expect("valid constant")
            .with_lipschitz(1.0)
            .expect("valid constant")
            .with_label(label)
    };
    let ts = resolvents
        .into_iter()
        .zip(rhos)
        .zip(gammas)
        .enumerate()
        .map(|(i, ((j, rho), g))| match g {
            StepSchedule::Constant(gamma) => {
                OperatorFamily::Constant(make(j, rho, gamma, format!("relaxed_resolvent_{i}")))
            }
            StepSchedule::Varying(f) => OperatorFamily::varying(dim, move |n| {
                make(j.clone(), rho, f(n), format!("relaxed_resolvent_{i}"))
            }),
        })
        .collect();
    Ok(SplittingProblem::new(
        OperatorFamily::Constant(AveragedOp::identity(dim)),
        ts,
        w,
    )?)
}

/// Least-squares relaxation of `r_i = R_i x`: `T_i = r_i + Id - R_i`.
pub fn build_residual_system(
    rs: Vec<AveragedOp>,
    targets: Vec<Point>,
    weights: Option<Weights>,
) -> Result<SplittingProblem, ProblemError> {
    let dim = check_dims(&rs)?;
    if targets.len() != rs.len() {
        return Err(ProblemError::CountMismatch {
            expected: rs.len(),
            got: targets.len(),
        });
    }
    if let Some(bad) = targets.iter().find(|t| t.dim() != dim || !t.is_finite()) {
        return Err(ProblemError::InvalidData(format!("target {bad:?} is not a finite point of R^{dim}")));
    }
    for (i, op) in rs.iter().enumerate() {
        certify_firm(i, op)?;
    }
    let w = default_weights(rs.len(), weights)?;
    let ts = rs
        .into_iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (r, target))| {
            // Id - R is firmly nonexpansive when R is; translation keeps it so
            AveragedOp::new(dim, 0.5, move |x: &Point| {
                let mut y = x.sub(&r.apply(x).unwrap_or_else(|_| Point::filled(x.dim(), f64::NAN)));
                y.axpy(1.0, &target);
                y
            })
            .expect("valid constant")
            .with_lipschitz(1.0)
            .expect("valid constant")
            .with_label(format!("residual_{i}"))
        })
        .collect();
    Ok(SplittingProblem::autonomous(AveragedOp::identity(dim), ts, w)?)
}

/// A single-valued `beta`-cocoercive map, optionally `sigma`-strongly
/// monotone.
#[derive(Clone)]
pub struct Cocoercive {
    dim: usize,
    beta: f64,
    strong: Option<f64>,
    label: Arc<str>,
    map: Arc<dyn Fn(&Point) -> Point + Send + Sync>,
}

impl fmt::Debug for Cocoercive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cocoercive")
            .field("dim", &self.dim)
            .field("beta", &self.beta)
            .field("strong", &self.strong)
            .field("label", &self.label)
            .finish()
    }
}

impl Cocoercive {
    pub fn new<F>(dim: usize, beta: f64, map: F) -> Result<Self, ProblemError>
    where
        F: Fn(&Point) -> Point + Send + Sync + 'static,
    {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(CalculusError::NonPositiveParameter { name: "beta", value: beta }.into());
        }
        Ok(Cocoercive {
            dim,
            beta,
            strong: None,
            label: Arc::from("cocoercive"),
            map: Arc::new(map),
        })
    }

    /// The zero map, cocoercive for every constant; `beta` is reported as
    /// `f64::INFINITY`.
    pub fn zero(dim: usize) -> Self {
        Cocoercive {
            dim,
            beta: f64::INFINITY,
            strong: None,
            label: Arc::from("zero"),
            map: Arc::new(move |_x: &Point| Point::zeros(dim)),
        }
    }

    /// The constant map `x -> c`, cocoercive for every constant like
    /// [`Cocoercive::zero`].
    pub fn constant(c: Point) -> Self {
        Cocoercive {
            dim: c.dim(),
            beta: f64::INFINITY,
            strong: None,
            label: Arc::from("constant"),
            map: Arc::new(move |_x: &Point| c.clone()),
        }
    }

    /// Gradient of the distance penalty, cocoercive with `beta = 1/L`.
    pub fn from_penalty(p: DistancePenalty) -> Self {
        let dim = p.dim();
        let beta = 1.0 / p.lipschitz();
        Cocoercive {
            dim,
            beta,
            strong: None,
            label: Arc::from("distance_penalty_gradient"),
            map: Arc::new(move |x: &Point| p.gradient(x)),
        }
    }

    pub fn with_strong_monotonicity(mut self, sigma: f64) -> Result<Self, ProblemError> {
        if !(sigma > 0.0) || sigma * self.beta > 1.0 + 1e-12 {
            return Err(ProblemError::InvalidData(format!(
                "strong monotonicity {sigma} is incompatible with cocoercivity {}",
                self.beta
            )));
        }
        self.strong = Some(sigma);
        Ok(self)
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Arc::from(label);
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, x: &Point) -> Point {
        (self.map)(x)
    }

    /// `Id - gamma A`, declared `gamma/(2 beta)`-averaged. Its Lipschitz
    /// constant is `sqrt(1 - gamma sigma (2 - gamma/beta))` under strong
    /// monotonicity and 1 otherwise.
    pub fn forward_step(&self, gamma: f64) -> Result<AveragedOp, ProblemError> {
        let upper = 2.0 * self.beta;
        if !(gamma > 0.0 && gamma < upper) {
            return Err(ProblemError::StepOutOfRange {
                gamma,
                lower: 0.0,
                upper,
            });
        }
        let map = self.map.clone();
        let alpha = if self.beta.is_infinite() { 0.5 } else { gamma / (2.0 * self.beta) };
        let op = AveragedOp::new(self.dim, alpha, move |x: &Point| {
            let mut y = x.clone();
            y.axpy(-gamma, &map(x));
            y
        })?
        .with_label(format!("forward_{}", self.label));
        let rate = match self.strong {
            Some(sigma) => (1.0 - gamma * sigma * (2.0 - gamma / self.beta)).max(0.0).sqrt(),
            None => 1.0,
        };
        Ok(op.with_lipschitz(rate)?)
    }
}

/// `gamma -> J_{gamma A_0}` for the outer operator.
pub type OuterResolvent = Arc<dyn Fn(f64) -> Result<AveragedOp, CalculusError> + Send + Sync>;

/// `A_0 = 0`.
pub fn resolvent_of_zero(dim: usize) -> OuterResolvent {
    Arc::new(move |_| Ok(AveragedOp::identity(dim)))
}

/// `A_0` the normal cone of `set`; every resolvent is the projector.
pub fn resolvent_of_normal_cone(set: ConvexSet) -> OuterResolvent {
    Arc::new(move |_| Ok(projector(&set)))
}

/// `A_0 = subdifferential of alpha ||.||_1`.
pub fn resolvent_of_l1(dim: usize, alpha: f64) -> OuterResolvent {
    Arc::new(move |gamma| prox_l1_op(dim, gamma * alpha))
}

/// `A_0 x = M x + c` with monotone `M`.
pub fn resolvent_of_affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> OuterResolvent {
    Arc::new(move |gamma| Ok(LinearResolvent::with_offset(matrix.clone(), offset.clone(), gamma)?.to_op()))
}

/// Zeros of `A_0 + sum_i w_i A_i` with cocoercive `A_i`:
/// `T_0 = J_{gamma A_0}`, `T_i = Id - gamma A_i`, `0 < gamma < 2 min beta_i`.
pub fn build_forward_backward(
    a0: OuterResolvent,
    a: Vec<Cocoercive>,
    gamma: Option<f64>,
    weights: Option<Weights>,
) -> Result<(SplittingProblem, f64), ProblemError> {
    let dim = a.first().ok_or(OperatorError::Empty)?.dim();
    if let Some(bad) = a.iter().find(|c| c.dim() != dim) {
        return Err(ProblemError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let min_beta = a.iter().map(Cocoercive::beta).fold(f64::INFINITY, f64::min);
    let upper = if min_beta.is_infinite() { 2.0 } else { 2.0 * min_beta };
    let gamma = pick_gamma(gamma, upper)?;
    let t0 = a0(gamma)?;
    if t0.dim() != dim {
        return Err(ProblemError::DimensionMismatch {
            expected: dim,
            got: t0.dim(),
        });
    }
    let ts = a
        .iter()
        .map(|c| c.forward_step(gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let w = default_weights(ts.len(), weights)?;
    Ok((SplittingProblem::autonomous(t0, ts, w)?, gamma))
}

/// Minimizes `f_0 + sum_i w_i f_i` with smooth `f_i`:
/// `T_0 = prox_{gamma f_0}`, `T_i = Id - gamma grad f_i`. `prox0` maps a
/// step to the corresponding proximity operator.
pub fn build_prox_grad(
    prox0: OuterResolvent,
    grads: Vec<Cocoercive>,
    gamma: Option<f64>,
    weights: Option<Weights>,
) -> Result<(SplittingProblem, f64), ProblemError> {
    build_forward_backward(prox0, grads, gamma, weights)
}

/// Minimizes `sum_i w_i phi_i(d_{D_i}(L_i x))` over `C_0`:
/// `T_0 = proj_{C_0}`, `T_i = Id - gamma grad(phi_i o d_{D_i} o L_i)` with
/// `gamma` in `(0, 2 beta)`, `beta = 1 / max_i mu_i ||L_i||^2`.
pub fn build_feasibility_relaxation(
    c0: &ConvexSet,
    terms: Vec<DistancePenalty>,
    gamma: Option<f64>,
    weights: Option<Weights>,
) -> Result<(SplittingProblem, f64), ProblemError> {
    let dim = c0.dim();
    if terms.is_empty() {
        return Err(OperatorError::Empty.into());
    }
    if let Some(bad) = terms.iter().find(|t| t.dim() != dim) {
        return Err(ProblemError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let max_lip = terms.iter().map(DistancePenalty::lipschitz).fold(0.0, f64::max);
    let beta = 1.0 / max_lip;
    let gamma = pick_gamma(gamma, 2.0 * beta)?;
    let ts = terms
        .iter()
        .map(|t| t.gradient_step(gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let w = default_weights(ts.len(), weights)?;
    Ok((SplittingProblem::autonomous(projector(c0), ts, w)?, gamma))
}

/// `x_{n+1} = proj_C(proj_D x_n)` encoded as a one-term feasibility
/// relaxation with `phi = t^2/2`, `L = Id` and `gamma = 1`.
pub fn alternating_projections(c: &ConvexSet, d: &ConvexSet) -> Result<SplittingProblem, ProblemError> {
    if c.dim() != d.dim() {
        return Err(ProblemError::DimensionMismatch {
            expected: c.dim(),
            got: d.dim(),
        });
    }
    let term = DistancePenalty::new(SmoothScalar::half_square(), LinearMap::identity(c.dim()), d.clone())?;
    Ok(build_feasibility_relaxation(c, vec![term], Some(1.0), None)?.0)
}
