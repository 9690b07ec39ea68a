use nalgebra::{DMatrix, DVector};

use super::CalculusError;
use crate::operators::{AveragedOp, Point};

#[derive(Clone, Debug)]
enum SetKind {
    Space,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Halfspace { normal: Point, offset: f64, normal_sq: f64 },
    Hyperplane { normal: Point, offset: f64, normal_sq: f64 },
    Ball { center: Point, radius: f64 },
    Affine(Affine),
    Singleton(Point),
}

/// `{x : M x = v}` with `M` of full row rank; `M M^T` is factored once.
#[derive(Clone, Debug)]
struct Affine {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

/// A nonempty closed convex subset of `R^d` with an exact projector.
#[derive(Clone, Debug)]
pub struct ConvexSet {
    dim: usize,
    kind: SetKind,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl ConvexSet {
    /// The whole space.
    pub fn space(dim: usize) -> Self {
        ConvexSet {
            dim,
            kind: SetKind::Space,
        }
    }

    /// Componentwise bounds; infinite bounds are allowed.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, CalculusError> {
        if lower.len() != upper.len() {
            return Err(CalculusError::InvalidSet("box bounds differ in length".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY)
        {
            return Err(CalculusError::InvalidSet("box has an empty side".into()));
        }
        Ok(ConvexSet {
            dim: lower.len(),
            kind: SetKind::Box { lower, upper },
        })
    }

    pub fn nonnegative_orthant(dim: usize) -> Self {
        Self::boxed(vec![0.0; dim], vec![f64::INFINITY; dim]).expect("valid orthant")
    }

    /// `{x : <a, x> <= b}`
    pub fn halfspace(normal: Point, offset: f64) -> Result<Self, CalculusError> {
        let normal_sq = normal.norm_sq();
        if !(normal_sq > 0.0) || !normal.is_finite() || !offset.is_finite() {
            return Err(CalculusError::InvalidSet("halfspace normal must be nonzero".into()));
        }
        Ok(ConvexSet {
            dim: normal.dim(),
            kind: SetKind::Halfspace {
                normal,
                offset,
                normal_sq,
            },
        })
    }

    /// `{x : <a, x> = b}`
    pub fn hyperplane(normal: Point, offset: f64) -> Result<Self, CalculusError> {
        let normal_sq = normal.norm_sq();
        if !(normal_sq > 0.0) || !normal.is_finite() || !offset.is_finite() {
            return Err(CalculusError::InvalidSet("hyperplane normal must be nonzero".into()));
        }
        Ok(ConvexSet {
            dim: normal.dim(),
            kind: SetKind::Hyperplane {
                normal,
                offset,
                normal_sq,
            },
        })
    }

    pub fn ball(center: Point, radius: f64) -> Result<Self, CalculusError> {
        if !(radius > 0.0) || !radius.is_finite() || !center.is_finite() {
            return Err(CalculusError::InvalidSet(format!("ball radius {radius} must be positive")));
        }
        Ok(ConvexSet {
            dim: center.dim(),
            kind: SetKind::Ball { center, radius },
        })
    }

    /// `{x : M x = v}`; `rows` are the rows of `M`. Rank-deficient systems are
    /// rejected.
    pub fn affine(rows: &[Vec<f64>], rhs: Vec<f64>) -> Result<Self, CalculusError> {
        if rows.is_empty() || rows.len() != rhs.len() {
            return Err(CalculusError::InvalidSet("affine system shape mismatch".into()));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim || !finite(r)) || !finite(&rhs) {
            return Err(CalculusError::InvalidSet("affine rows must be finite and equally long".into()));
        }
        let matrix = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
        let gram_matrix = &matrix * matrix.transpose();
        let eig = gram_matrix.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > 1e-12 * max.max(1.0)) {
            return Err(CalculusError::Singular("affine system is rank deficient".into()));
        }
        let gram = gram_matrix
            .cholesky()
            .ok_or_else(|| CalculusError::Singular("affine Gram matrix".into()))?;
        Ok(ConvexSet {
            dim,
            kind: SetKind::Affine(Affine {
                matrix,
                rhs: DVector::from_vec(rhs),
                gram,
            }),
        })
    }

    pub fn singleton(p: Point) -> Result<Self, CalculusError> {
        if !p.is_finite() {
            return Err(CalculusError::InvalidSet("singleton must be finite".into()));
        }
        Ok(ConvexSet {
            dim: p.dim(),
            kind: SetKind::Singleton(p),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            SetKind::Space => "space",
            SetKind::Box { .. } => "box",
            SetKind::Halfspace { .. } => "halfspace",
            SetKind::Hyperplane { .. } => "hyperplane",
            SetKind::Ball { .. } => "ball",
            SetKind::Affine(_) => "affine",
            SetKind::Singleton(_) => "singleton",
        }
    }

    /// Nearest point of the set. Panics on a dimension mismatch; use
    /// [`project`] for a checked call.
    pub fn project_unchecked(&self, x: &Point) -> Point {
        match &self.kind {
            SetKind::Space => x.clone(),
            SetKind::Box { lower, upper } => Point::from(
                x.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&c, (&l, &u))| c.max(l).min(u))
                    .collect::<Vec<_>>(),
            ),
            SetKind::Halfspace {
                normal,
                offset,
                normal_sq,
            } => {
                let excess = normal.dot(x) - offset;
                if excess <= 0.0 {
                    x.clone()
                } else {
                    let mut p = x.clone();
                    p.axpy(-excess / normal_sq, normal);
                    p
                }
            }
            SetKind::Hyperplane {
                normal,
                offset,
                normal_sq,
            } => {
                let excess = normal.dot(x) - offset;
                let mut p = x.clone();
                p.axpy(-excess / normal_sq, normal);
                p
            }
            SetKind::Ball { center, radius } => {
                let d = x.dist(center);
                if d <= *radius {
                    x.clone()
                } else {
                    center.lerp(x, radius / d)
                }
            }
            SetKind::Affine(a) => {
                let xv = DVector::from_column_slice(x.as_slice());
                let resid = &a.matrix * &xv - &a.rhs;
                let lam = a.gram.solve(&resid);
                let p = xv - a.matrix.transpose() * lam;
                Point::from(p.as_slice())
            }
            SetKind::Singleton(p) => p.clone(),
        }
    }

    pub fn distance(&self, x: &Point) -> f64 {
        x.dist(&self.project_unchecked(x))
    }

    /// Membership up to an absolute tolerance on the projection residual.
    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        self.distance(x) <= tol
    }
}

/// Checked projection onto `set`.
pub fn project(set: &ConvexSet, x: &Point) -> Result<Point, CalculusError> {
    if x.dim() != set.dim() {
        return Err(CalculusError::DimensionMismatch {
            expected: set.dim(),
            got: x.dim(),
        });
    }
    Ok(set.project_unchecked(x))
}

/// The projector onto `set` as a firmly nonexpansive operator.
pub fn projector(set: &ConvexSet) -> AveragedOp {
    let s = set.clone();
    AveragedOp::new(set.dim(), 0.5, move |x: &Point| s.project_unchecked(x))
        .expect("1/2 is a valid constant")
        .with_lipschitz(1.0)
        .expect("1 is a valid constant")
        .with_label(format!("proj_{}", set.kind_name()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::certify_averaged;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Vec<ConvexSet> {
        vec![
            ConvexSet::space(3),
            ConvexSet::boxed(vec![-1.0, 0.0, f64::NEG_INFINITY], vec![1.0, 2.0, 0.5]).unwrap(),
            ConvexSet::nonnegative_orthant(3),
            ConvexSet::halfspace(Point::from([1.0, -2.0, 0.5]), 0.7).unwrap(),
            ConvexSet::hyperplane(Point::from([0.0, 1.0, 1.0]), -1.0).unwrap(),
            ConvexSet::ball(Point::from([1.0, 0.0, -1.0]), 1.5).unwrap(),
            ConvexSet::affine(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, -1.0]], vec![1.0, 2.0]).unwrap(),
            ConvexSet::singleton(Point::from([0.3, -0.2, 4.0])).unwrap(),
        ]
    }

    #[test]
    fn projection_examples() {
        let h = ConvexSet::halfspace(Point::from([1.0, 0.0]), 0.0).unwrap();
        assert_eq!(project(&h, &Point::from([2.0, 3.0])).unwrap(), Point::from([0.0, 3.0]));
        assert_eq!(project(&h, &Point::from([-2.0, 3.0])).unwrap(), Point::from([-2.0, 3.0]));

        let b = ConvexSet::ball(Point::zeros(2), 1.0).unwrap();
        let p = project(&b, &Point::from([3.0, 4.0])).unwrap();
        assert!(p.dist(&Point::from([0.6, 0.8])) < 1e-15);
        assert_eq!(project(&b, &Point::from([0.1, 0.2])).unwrap(), Point::from([0.1, 0.2]));
        assert!(project(&b, &Point::zeros(3)).is_err());
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(ConvexSet::ball(Point::zeros(2), 0.0).is_err());
        assert!(ConvexSet::halfspace(Point::zeros(2), 1.0).is_err());
        assert!(ConvexSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(matches!(
            ConvexSet::affine(&[vec![1.0, 1.0], vec![2.0, 2.0]], vec![1.0, 2.0]),
            Err(CalculusError::Singular(_))
        ));
    }

    #[test]
    fn projections_are_idempotent_and_contract_to_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for set in catalog() {
            for _ in 0..200 {
                let x = Point::from((0..3).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<_>>());
                let p = set.project_unchecked(&x);
                let pp = set.project_unchecked(&p);
                assert!(p.max_abs_diff(&pp) <= 1e-12, "{} not idempotent", set.kind_name());
                let y = Point::from((0..3).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<_>>());
                let member = set.project_unchecked(&y);
                assert!(p.dist(&member) <= x.dist(&member) + 1e-12);
            }
        }
    }

    #[test]
    fn projectors_certify_firm() {
        for (k, set) in catalog().iter().enumerate() {
            let cert = certify_averaged(&projector(set), 2000, k as u64);
            assert!(cert.passed, "{}: {cert:?}", set.kind_name());
        }
    }

    #[test]
    fn affine_projection_lands_on_system() {
        let set = ConvexSet::affine(&[vec![1.0, 2.0, 3.0]], vec![6.0]).unwrap();
        let p = set.project_unchecked(&Point::from([0.0, 0.0, 0.0]));
        assert!((p[0] + 2.0 * p[1] + 3.0 * p[2] - 6.0).abs() < 1e-12);
        // the correction is along the normal
        assert!((p[1] / p[0] - 2.0).abs() < 1e-12);
    }
}
