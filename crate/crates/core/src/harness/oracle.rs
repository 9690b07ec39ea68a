//! Reference solutions computed without the block solver.

use nalgebra::{DMatrix, DVector};

use crate::operators::Point;
use crate::problems::{Loss, SparseRegression};

/// Normal-equation residual accepted by [`oracle_least_squares`].
pub const LEAST_SQUARES_ACCURACY: f64 = 1e-12;
/// Fixed-point tolerance of [`oracle_prox_grad_reference`].
pub const PROX_GRAD_TOLERANCE: f64 = 1e-13;
/// Subgradient optimality required of [`oracle_prox_grad_reference`].
pub const PROX_GRAD_OPTIMALITY: f64 = 1e-8;
pub const PROX_GRAD_ITERATION_CAP: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub solution: Point,
    pub method: &'static str,
    /// Achieved value of the method's own residual.
    pub accuracy: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("normal matrix is rank deficient (eigenvalue ratio {0:e})")]
    RankDeficient(f64),
    #[error("rows and targets disagree: {0}")]
    BadInput(String),
    #[error("residual {residual:e} above the required {required:e}")]
    Inaccurate { residual: f64, required: f64 },
    #[error("no convergence within {iterations} iterations (residual {residual:e})")]
    IterationCap { iterations: usize, residual: f64 },
}

fn design(rows: &[Point]) -> Result<DMatrix<f64>, OracleError> {
    let n = rows.first().map(Point::dim).ok_or_else(|| OracleError::BadInput("no rows".into()))?;
    if rows.iter().any(|r| r.dim() != n) {
        return Err(OracleError::BadInput("rows have different lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

/// Solves `A^T A x = A^T eta` by Cholesky with one step of iterative
/// refinement.
pub fn oracle_least_squares(rows: &[Point], targets: &[f64]) -> Result<OracleResult, OracleError> {
    if rows.len() != targets.len() {
        return Err(OracleError::BadInput(format!("{} rows, {} targets", rows.len(), targets.len())));
    }
    let a = design(rows)?;
    let eta = DVector::from_column_slice(targets);
    let gram = a.tr_mul(&a);
    let rhs = a.tr_mul(&eta);
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-12 * hi) {
        return Err(OracleError::RankDeficient(lo / hi));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(OracleError::RankDeficient(lo / hi))?;
    let mut x = chol.solve(&rhs);
    let correction = chol.solve(&(&rhs - &gram * &x));
    x += correction;
    let residual = (&gram * &x - &rhs).norm();
    if residual > LEAST_SQUARES_ACCURACY {
        return Err(OracleError::Inaccurate {
            residual,
            required: LEAST_SQUARES_ACCURACY,
        });
    }
    Ok(OracleResult {
        solution: Point::from(x.as_slice()),
        method: "normal_equations",
        accuracy: residual,
        iterations: 0,
    })
}

/// Derivative of the smooth loss `phi_i` at `t`, coded here so the oracle
/// shares no iteration or gradient code with the solver.
fn loss_derivative(loss: Loss, t: f64, eta: f64) -> f64 {
    match loss {
        Loss::Squared => 2.0 * (t - eta),
        Loss::Logistic => {
            let s = if t >= 0.0 {
                1.0 / (1.0 + (-t).exp())
            } else {
                let e = t.exp();
                e / (1.0 + e)
            };
            s - eta
        }
    }
}

fn gradient(a: &DMatrix<f64>, eta: &[f64], loss: Loss, x: &DVector<f64>) -> DVector<f64> {
    let m = a.nrows() as f64;
    let ax = a * x;
    let d = DVector::from_iterator(
        a.nrows(),
        ax.iter().zip(eta).map(|(&t, &e)| loss_derivative(loss, t, e) / m),
    );
    a.tr_mul(&d)
}

fn shrink(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn optimality(g: &DVector<f64>, x: &DVector<f64>, alpha: f64) -> f64 {
    x.iter()
        .zip(g.iter())
        .map(|(&xk, &gk)| {
            if xk != 0.0 {
                (gk + alpha * xk.signum()).abs()
            } else {
                (gk.abs() - alpha).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Full-gradient proximal gradient on `alpha ||x||_1 + (1/m) sum_i
/// phi_i(<a_i, x>)`, run from zero until the step is below
/// [`PROX_GRAD_TOLERANCE`], then checked for subgradient optimality.
///
/// The step is `1/L` with `L = mu lambda_max(A^T A) / m`, the Lipschitz
/// constant of the averaged gradient.
pub fn oracle_prox_grad_reference(problem: &SparseRegression) -> Result<OracleResult, OracleError> {
    let a = design(problem.rows())?;
    let eta = problem.targets();
    let loss = problem.loss();
    let alpha = problem.alpha();
    let mu = match loss {
        Loss::Squared => 2.0,
        Loss::Logistic => 0.25,
    };
    let lmax = a.tr_mul(&a).symmetric_eigen().eigenvalues.max();
    let step = a.nrows() as f64 / (mu * lmax);
    let mut x = DVector::zeros(a.ncols());
    let mut residual = f64::INFINITY;
    for it in 1..=PROX_GRAD_ITERATION_CAP {
        let g = gradient(&a, eta, loss, &x);
        let next = DVector::from_iterator(
            x.len(),
            x.iter().zip(g.iter()).map(|(&xk, &gk)| shrink(xk - step * gk, step * alpha)),
        );
        residual = (&next - &x).norm();
        x = next;
        if residual <= PROX_GRAD_TOLERANCE {
            let opt = optimality(&gradient(&a, eta, loss, &x), &x, alpha);
            if opt > PROX_GRAD_OPTIMALITY {
                return Err(OracleError::Inaccurate {
                    residual: opt,
                    required: PROX_GRAD_OPTIMALITY,
                });
            }
            return Ok(OracleResult {
                solution: Point::from(x.as_slice()),
                method: "proximal_gradient",
                accuracy: opt,
                iterations: it,
            });
        }
    }
    Err(OracleError::IterationCap {
        iterations: PROX_GRAD_ITERATION_CAP,
        residual,
    })
}
