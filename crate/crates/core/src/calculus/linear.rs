use nalgebra::{DMatrix, DVector, LU};

use super::CalculusError;
use crate::operators::{AveragedOp, Point};

/// Relative tolerance and iteration cap for the power iteration behind
/// [`LinearMap::norm`].
pub const POWER_ITERATION_TOLERANCE: f64 = 1e-10;
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Tolerance on the smallest eigenvalue of the symmetric part when checking
/// monotonicity.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
enum MapKind {
    Identity,
    Dense(DMatrix<f64>),
}

/// A bounded linear map `R^domain -> R^codomain` with its adjoint.
#[derive(Clone, Debug)]
pub struct LinearMap {
    domain: usize,
    codomain: usize,
    kind: MapKind,
    norm: f64,
}

impl LinearMap {
    pub fn identity(dim: usize) -> Self {
        LinearMap {
            domain: dim,
            codomain: dim,
            kind: MapKind::Identity,
            norm: 1.0,
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self, CalculusError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(CalculusError::InvalidMap("matrix has non-finite entries".into()));
        }
        let norm = power_norm(&matrix);
        if !(norm > 0.0) {
            return Err(CalculusError::InvalidMap("linear map must be nonzero".into()));
        }
        Ok(LinearMap {
            domain: matrix.ncols(),
            codomain: matrix.nrows(),
            kind: MapKind::Dense(matrix),
            norm,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CalculusError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
            return Err(CalculusError::InvalidMap("ragged or empty rows".into()));
        }
        Self::from_matrix(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
    }

    /// The functional `x -> <x, a>` as a map into `R`.
    pub fn functional(a: &Point) -> Result<Self, CalculusError> {
        Self::from_rows(&[a.as_slice().to_vec()])
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn codomain(&self) -> usize {
        self.codomain
    }

    /// Operator norm (largest singular value).
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn apply(&self, x: &Point) -> Point {
        match &self.kind {
            MapKind::Identity => x.clone(),
            MapKind::Dense(m) => {
                let y = m * DVector::from_column_slice(x.as_slice());
                Point::from(y.as_slice())
            }
        }
    }

    pub fn adjoint(&self, y: &Point) -> Point {
        match &self.kind {
            MapKind::Identity => y.clone(),
            MapKind::Dense(m) => {
                let x = m.tr_mul(&DVector::from_column_slice(y.as_slice()));
                Point::from(x.as_slice())
            }
        }
    }
}

/// Largest singular value by power iteration on `M^T M`.
fn power_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let gram = m.tr_mul(m);
    // deterministic start with no special alignment
    let mut v = DVector::from_fn(n, |k, _| 1.0 + 0.1 * ((k as f64) * 0.7).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        let w = &gram * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / wn;
        if (next - lambda).abs() <= POWER_ITERATION_TOLERANCE * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // the Rayleigh quotient is refined once more on the final vector
    let lambda = v.dot(&(&gram * &v)).max(lambda);
    lambda.sqrt()
}

/// The resolvent `(Id + gamma A)^{-1}` of an affine monotone map
/// `A x = M x + c`, factored once at construction.
#[derive(Clone, Debug)]
pub struct LinearResolvent {
    dim: usize,
    gamma: f64,
    shift: DVector<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Smallest eigenvalue of `(M + M^T)/2`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

impl LinearResolvent {
    pub fn new(matrix: DMatrix<f64>, gamma: f64) -> Result<Self, CalculusError> {
        let dim = matrix.nrows();
        Self::with_offset(matrix, DVector::zeros(dim), gamma)
    }

    /// Resolvent of `x -> M x + c`.
    pub fn with_offset(
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
        gamma: f64,
    ) -> Result<Self, CalculusError> {
        if !matrix.is_square() || offset.len() != matrix.nrows() {
            return Err(CalculusError::InvalidMap("resolvent needs a square matrix".into()));
        }
        if !(gamma > 0.0) {
            return Err(CalculusError::NonPositiveParameter { name: "gamma", value: gamma });
        }
        let min_eig = min_symmetric_eigenvalue(&matrix);
        if min_eig < -MONOTONICITY_TOLERANCE {
            return Err(CalculusError::NotMonotone { min_eigenvalue: min_eig });
        }
        let dim = matrix.nrows();
        let system = DMatrix::identity(dim, dim) + &matrix * gamma;
        let lu = system.lu();
        if !lu.is_invertible() {
            return Err(CalculusError::Singular("I + gamma A".into()));
        }
        Ok(LinearResolvent {
            dim,
            gamma,
            shift: offset * gamma,
            lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn apply(&self, x: &Point) -> Point {
        let rhs = DVector::from_column_slice(x.as_slice()) - &self.shift;
        let v = self.lu.solve(&rhs).expect("factorization checked at construction");
        Point::from(v.as_slice())
    }

    /// The resolvent as a firmly nonexpansive operator.
    pub fn to_op(&self) -> AveragedOp {
        let r = self.clone();
        AveragedOp::new(self.dim, 0.5, move |x: &Point| r.apply(x))
            .expect("valid constant")
            .with_lipschitz(1.0)
            .expect("valid constant")
            .with_label("linear_resolvent")
    }
}

/// Solves `(I + gamma A) v = x` for a monotone square `A`.
pub fn resolvent_linear(a: &DMatrix<f64>, gamma: f64, x: &Point) -> Result<Point, CalculusError> {
    let r = LinearResolvent::new(a.clone(), gamma)?;
    if x.dim() != r.dim() {
        return Err(CalculusError::DimensionMismatch {
            expected: r.dim(),
            got: x.dim(),
        });
    }
    Ok(r.apply(x))
}
