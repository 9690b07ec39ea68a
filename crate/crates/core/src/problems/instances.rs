use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    build_feasibility_relaxation, build_prox_grad, resolvent_of_l1, Cocoercive, ProblemError,
    DEFAULT_STEP_FRACTION,
};
use crate::calculus::{sigmoid, ConvexSet, DistancePenalty, LinearMap, SmoothScalar};
use crate::operators::{Point, Weights};
use crate::solver::SplittingProblem;

/// Regularization weight of [`SparseRegression::lasso_random`].
pub const LASSO_ALPHA: f64 = 0.1;
/// Regularization weight of [`SparseRegression::logistic_random`].
pub const LOGISTIC_ALPHA: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// `phi_i(t) = |t - eta_i|^2`
    Squared,
    /// `phi_i(t) = ln(1 + e^t) - eta_i t`
    Logistic,
}

/// `alpha ||x||_1 + (1/m) sum_i phi_i(<x, a_i>)`.
#[derive(Clone, Debug)]
pub struct SparseRegression {
    rows: Vec<Point>,
    targets: Vec<f64>,
    alpha: f64,
    loss: Loss,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_rows(rng: &mut ChaCha8Rng, dim: usize, m: usize) -> Vec<Point> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..m)
        .map(|_| {
            Point::from(
                (0..dim)
                    .map(|_| scale * normal(rng))
                    .collect::<Vec<f64>>(),
            )
        })
        .collect()
}

impl SparseRegression {
    pub fn new(rows: Vec<Point>, targets: Vec<f64>, alpha: f64, loss: Loss) -> Result<Self, ProblemError> {
        let dim = rows.first().map(Point::dim).ok_or_else(|| ProblemError::InvalidData("no rows".into()))?;
        if rows.len() != targets.len() {
            return Err(ProblemError::CountMismatch {
                expected: rows.len(),
                got: targets.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        if rows.iter().any(|r| !r.is_finite() || r.norm_sq() == 0.0) {
            return Err(ProblemError::InvalidData("rows must be finite and nonzero".into()));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(ProblemError::InvalidData("targets must be finite".into()));
        }
        if loss == Loss::Logistic && targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ProblemError::InvalidData("logistic labels must lie in [0, 1]".into()));
        }
        if !(alpha >= 0.0) {
            return Err(ProblemError::InvalidData(format!("alpha = {alpha} must be nonnegative")));
        }
        Ok(SparseRegression {
            rows,
            targets,
            alpha,
            loss,
        })
    }

    /// Gaussian design with rows of expected unit norm, a sparse ground
    /// truth and small Gaussian noise.
    pub fn lasso_random(dim: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = gaussian_rows(&mut rng, dim, m);
        let support = dim.div_ceil(4);
        let truth = Point::from(
            (0..dim)
                .map(|k| {
                    if k < support {
                        normal(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<f64>>(),
        );
        let targets = rows
            .iter()
            .map(|a| a.dot(&truth) + 0.1 * normal(&mut rng))
            .collect();
        Self::new(rows, targets, LASSO_ALPHA, Loss::Squared).expect("generated data is valid")
    }

    /// Gaussian design with labels drawn from the logistic model of a dense
    /// ground truth.
    pub fn logistic_random(dim: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = gaussian_rows(&mut rng, dim, m);
        let truth = Point::from(
            (0..dim)
                .map(|_| 2.0 * normal(&mut rng))
                .collect::<Vec<f64>>(),
        );
        let targets = rows
            .iter()
            .map(|a| {
                if rng.random::<f64>() < sigmoid(a.dot(&truth)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(rows, targets, LOGISTIC_ALPHA, Loss::Logistic).expect("generated data is valid")
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Point] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self, ProblemError> {
        if !(alpha >= 0.0) {
            return Err(ProblemError::InvalidData(format!("alpha = {alpha} must be nonnegative")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// The scalar loss of observation `i`.
    pub fn scalar(&self, i: usize) -> SmoothScalar {
        match self.loss {
            Loss::Squared => SmoothScalar::squared_residual(self.targets[i]),
            Loss::Logistic => SmoothScalar::logistic(self.targets[i]),
        }
    }

    fn mu(&self) -> f64 {
        match self.loss {
            Loss::Squared => 2.0,
            Loss::Logistic => 0.25,
        }
    }

    pub fn smooth_value(&self, x: &Point) -> f64 {
        let m = self.m() as f64;
        (0..self.m())
            .map(|i| self.scalar(i).value(self.rows[i].dot(x)))
            .sum::<f64>()
            / m
    }

    pub fn smooth_gradient(&self, x: &Point) -> Point {
        let m = self.m() as f64;
        let mut g = Point::zeros(self.dim());
        for (i, a) in self.rows.iter().enumerate() {
            g.axpy(self.scalar(i).derivative(a.dot(x)) / m, a);
        }
        g
    }

    pub fn objective(&self, x: &Point) -> f64 {
        self.alpha * x.iter().map(|v| v.abs()).sum::<f64>() + self.smooth_value(x)
    }

    /// Largest coordinatewise violation of `0 in grad(x) + alpha d||x||_1`.
    pub fn optimality_residual(&self, x: &Point) -> f64 {
        let g = self.smooth_gradient(x);
        x.iter()
            .zip(g.iter())
            .map(|(&xk, &gk)| {
                if xk != 0.0 {
                    (gk + self.alpha * xk.signum()).abs()
                } else {
                    (gk.abs() - self.alpha).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `2 / max_i (mu ||a_i||^2)`
    pub fn step_upper_bound(&self) -> f64 {
        let max_sq = self.rows.iter().map(Point::norm_sq).fold(0.0, f64::max);
        2.0 / (self.mu() * max_sq)
    }

    pub fn default_gamma(&self) -> f64 {
        DEFAULT_STEP_FRACTION * self.step_upper_bound()
    }

    /// `grad f_i(x) = phi_i'(<x, a_i>) a_i`, cocoercive with
    /// `beta_i = 1 / (mu ||a_i||^2)`.
    pub fn gradient_maps(&self) -> Vec<Cocoercive> {
        (0..self.m())
            .map(|i| {
                let a = self.rows[i].clone();
                let phi = self.scalar(i);
                let beta = 1.0 / (self.mu() * a.norm_sq());
                Cocoercive::new(a.dim(), beta, move |x: &Point| a.scale(phi.derivative(a.dot(x))))
                    .expect("positive beta")
                    .with_label(&format!("grad_f{i}"))
            })
            .collect()
    }

    /// `T_0 = prox_{gamma alpha ||.||_1}`, `T_i = Id - gamma grad f_i`,
    /// uniform weights. Returns the problem and the step used.
    pub fn build(&self, gamma: Option<f64>) -> Result<(SplittingProblem, f64), ProblemError> {
        build_prox_grad(
            resolvent_of_l1(self.dim(), self.alpha),
            self.gradient_maps(),
            gamma,
            Some(Weights::uniform(self.m())),
        )
    }
}

/// Least squares `min (1/m) sum_i |<x, a_i> - eta_i|^2` posed as a
/// feasibility relaxation with `D_i = {eta_i}` and `C_0 = R^N`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    rows: Vec<Point>,
    targets: Vec<f64>,
}

impl LeastSquares {
    pub fn new(rows: Vec<Point>, targets: Vec<f64>) -> Result<Self, ProblemError> {
        // validation is shared with the regression container
        SparseRegression::new(rows.clone(), targets.clone(), 0.0, Loss::Squared)?;
        Ok(LeastSquares { rows, targets })
    }

    /// Gaussian rows scaled to unit norm and Gaussian targets.
    pub fn random_unit(dim: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = gaussian_rows(&mut rng, dim, m)
            .into_iter()
            .map(|r| {
                let n = r.norm();
                r.scale(1.0 / n)
            })
            .collect();
        let targets = (0..m).map(|_| normal(&mut rng)).collect();
        Self::new(rows, targets).expect("generated data is valid")
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Point] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// `phi = t^2`, `L_i = <., a_i>`, `D_i = {eta_i}`.
    pub fn penalties(&self) -> Vec<DistancePenalty> {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(a, &eta)| {
                DistancePenalty::new(
                    SmoothScalar::square(),
                    LinearMap::functional(a).expect("nonzero row"),
                    ConvexSet::singleton(Point::from([eta])).expect("finite target"),
                )
                .expect("square is even and vanishing")
            })
            .collect()
    }

    pub fn objective(&self, x: &Point) -> f64 {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(a, eta)| (a.dot(x) - eta).powi(2))
            .sum::<f64>()
            / self.m() as f64
    }

    pub fn build(&self, gamma: Option<f64>) -> Result<(SplittingProblem, f64), ProblemError> {
        build_feasibility_relaxation(
            &ConvexSet::space(self.dim()),
            self.penalties(),
            gamma,
            Some(Weights::uniform(self.m())),
        )
    }
}
