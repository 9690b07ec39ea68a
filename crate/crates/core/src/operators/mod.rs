//! Averaged operators on a finite-dimensional space and the algebra used to
//! assemble composite fixed-point problems from them.
//!
//! An operator `T` is `alpha`-averaged when `Id + (T - Id)/alpha` is
//! nonexpansive. Declared constants are trusted at run time; use
//! [`certify_averaged`] to check them empirically.

mod certify;
mod point;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use certify::{certify_averaged, Certificate, CERTIFY_TOLERANCE};
pub use point::{weighted_sum, Point};

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("operator `{label}` produced a non-finite output")]
    NonFiniteOutput { label: String },
    #[error("averagedness constant {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("Lipschitz constant {0} outside (0, 1]")]
    InvalidLipschitz(f64),
    #[error("weights must be strictly positive and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("empty operator list")]
    Empty,
    #[error("relaxation parameter {lambda} inadmissible for alpha = {alpha}")]
    InvalidRelaxation { lambda: f64, alpha: f64 },
}

type EvalFn = dyn Fn(&Point) -> Point + Send + Sync;

/// An evaluable operator with declared averagedness constant and optional
/// Lipschitz constant.
///
/// Cloning is cheap; the evaluation closure is shared.
#[derive(Clone)]
pub struct AveragedOp {
    dim: usize,
    alpha: f64,
    lipschitz: Option<f64>,
    label: Arc<str>,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for AveragedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedOp")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl AveragedOp {
    /// Wraps `eval` as an operator on `R^dim` with declared constant `alpha`.
    pub fn new<F>(dim: usize, alpha: f64, eval: F) -> Result<Self, OperatorError>
    where
        F: Fn(&Point) -> Point + Send + Sync + 'static,
    {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(OperatorError::InvalidAlpha(alpha));
        }
        Ok(AveragedOp {
            dim,
            alpha,
            lipschitz: None,
            label: Arc::from("op"),
            eval: Arc::new(eval),
        })
    }

    pub fn with_lipschitz(mut self, rho: f64) -> Result<Self, OperatorError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(OperatorError::InvalidLipschitz(rho));
        }
        self.lipschitz = Some(rho);
        Ok(self)
    }

    pub fn with_label(mut self, label: impl AsRef<str>) -> Self {
        self.label = Arc::from(label.as_ref());
        self
    }

    /// The identity. It is averaged for every constant; we declare 1/2.
    pub fn identity(dim: usize) -> Self {
        AveragedOp {
            dim,
            alpha: 0.5,
            lipschitz: Some(1.0),
            label: Arc::from("identity"),
            eval: Arc::new(|x: &Point| x.clone()),
        }
    }

    /// `x -> c x` for `c` in `[-1, 1)`, which is `(1 - c)/2`-averaged.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self, OperatorError> {
        if !(-1.0..1.0).contains(&c) {
            return Err(OperatorError::InvalidAlpha((1.0 - c) / 2.0));
        }
        let mut op = AveragedOp::new(dim, (1.0 - c) / 2.0, move |x: &Point| x.scale(c))?
            .with_label(format!("{c}*Id"));
        op.lipschitz = Some(c.abs());
        Ok(op)
    }

    /// The constant map `x -> p` (a projector onto `{p}`), firmly nonexpansive.
    pub fn constant(p: Point) -> Self {
        let dim = p.dim();
        AveragedOp {
            dim,
            alpha: 0.5,
            lipschitz: Some(0.0),
            label: Arc::from("constant"),
            eval: Arc::new(move |_x: &Point| p.clone()),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluates the operator, checking the input dimension and output finiteness.
    pub fn apply(&self, x: &Point) -> Result<Point, OperatorError> {
        if x.dim() != self.dim {
            return Err(OperatorError::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        let y = (self.eval)(x);
        if y.dim() != self.dim {
            return Err(OperatorError::DimensionMismatch {
                expected: self.dim,
                got: y.dim(),
            });
        }
        if !y.is_finite() {
            return Err(OperatorError::NonFiniteOutput {
                label: self.label.to_string(),
            });
        }
        Ok(y)
    }

    pub(crate) fn eval_raw(&self, x: &Point) -> Point {
        (self.eval)(x)
    }
}

/// Convex weights: strictly positive, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self, OperatorError> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() {
            return Err(OperatorError::Empty);
        }
        if w.iter().any(|&v| !(v > 0.0) || !v.is_finite())
            || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE
        {
            return Err(OperatorError::InvalidWeights { sum });
        }
        Ok(Weights(w))
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform weights need at least one entry");
        Weights(vec![1.0 / m as f64; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for Weights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dims(expected: usize, got: usize) -> Result<(), OperatorError> {
    if expected != got {
        Err(OperatorError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// `x -> sum_i w_i T_i x`, accumulated in ascending index order with
/// compensated summation.
///
/// The result is `(max alpha_i)`-averaged; its Lipschitz constant is
/// `sum_i w_i rho_i` when every `rho_i` is declared.
pub fn convex_combination(ops: &[AveragedOp], weights: &[f64]) -> Result<AveragedOp, OperatorError> {
    if ops.is_empty() {
        return Err(OperatorError::Empty);
    }
    if ops.len() != weights.len() {
        return Err(OperatorError::WeightCount {
            expected: ops.len(),
            got: weights.len(),
        });
    }
    let weights = Weights::new(weights.to_vec())?;
    let dim = ops[0].dim;
    for op in ops {
        check_dims(dim, op.dim)?;
    }
    let alpha = ops.iter().map(|op| op.alpha).fold(0.0, f64::max);
    let lipschitz = ops
        .iter()
        .zip(weights.as_slice())
        .map(|(op, w)| op.lipschitz.map(|r| w * r))
        .sum::<Option<f64>>()
        .map(|r| r.min(1.0));
    let ops: Vec<AveragedOp> = ops.to_vec();
    let label = format!("convex_combination[{}]", ops.len());
    let eval = move |x: &Point| {
        let images: Vec<Point> = ops.iter().map(|op| op.eval_raw(x)).collect();
        weighted_sum(dim, weights.as_slice().iter().copied().zip(images.iter()))
    };
    let mut out = AveragedOp::new(dim, alpha, eval)?.with_label(label);
    out.lipschitz = lipschitz;
    Ok(out)
}

/// `x -> outer(inner(x))`.
///
/// The averagedness constant of a composition is not tracked; the result is
/// declared merely nonexpansive (`alpha = 1`).
pub fn compose(outer: &AveragedOp, inner: &AveragedOp) -> Result<AveragedOp, OperatorError> {
    check_dims(outer.dim, inner.dim)?;
    let (o, i) = (outer.clone(), inner.clone());
    let label = format!("{}∘{}", outer.label, inner.label);
    let mut out = AveragedOp::new(outer.dim, 1.0, move |x: &Point| o.eval_raw(&i.eval_raw(x)))?
        .with_label(label);
    out.lipschitz = match (outer.lipschitz, inner.lipschitz) {
        (Some(a), Some(b)) => Some(a * b),
        _ => None,
    };
    Ok(out)
}

/// `x -> x + lambda (T x - x)`, declared `lambda * alpha`-averaged.
pub fn relax(op: &AveragedOp, lambda: f64) -> Result<AveragedOp, OperatorError> {
    let alpha = lambda * op.alpha;
    if !(lambda > 0.0) || !(alpha <= 1.0) {
        return Err(OperatorError::InvalidRelaxation {
            lambda,
            alpha: op.alpha,
        });
    }
    let inner = op.clone();
    let label = format!("relax({}, {lambda})", op.label);
    let mut out = AveragedOp::new(op.dim, alpha, move |x: &Point| x.lerp(&inner.eval_raw(x), lambda))?
        .with_label(label);
    out.lipschitz = op
        .lipschitz
        .map(|r| (1.0 - lambda).abs() + lambda * r)
        .filter(|&r| r <= 1.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn proj_nonneg(dim: usize) -> AveragedOp {
        AveragedOp::new(dim, 0.5, |x: &Point| x.map(|c| c.max(0.0))).unwrap()
    }

    fn proj_axis(dim: usize, keep: usize) -> AveragedOp {
        AveragedOp::new(dim, 0.5, move |x: &Point| {
            let mut y = Point::zeros(x.dim());
            y[keep] = x[keep];
            y
        })
        .unwrap()
        .with_lipschitz(1.0)
        .unwrap()
    }

    #[test]
    fn apply_examples() {
        let id = AveragedOp::identity(2);
        assert_eq!(id.apply(&Point::from([1.0, -2.0])).unwrap(), Point::from([1.0, -2.0]));
        let p = proj_nonneg(2);
        assert_eq!(p.apply(&Point::from([-1.0, 3.0])).unwrap(), Point::from([0.0, 3.0]));
        let half = AveragedOp::scaled_identity(1, 0.5).unwrap();
        assert_eq!(half.apply(&Point::from([4.0])).unwrap(), Point::from([2.0]));
    }

    #[test]
    fn apply_errors() {
        let id = AveragedOp::identity(2);
        assert!(matches!(
            id.apply(&Point::from([1.0])),
            Err(OperatorError::DimensionMismatch { expected: 2, got: 1 })
        ));
        let bad = AveragedOp::new(1, 1.0, |x: &Point| x.map(|c| c / 0.0)).unwrap();
        assert!(matches!(
            bad.apply(&Point::from([1.0])),
            Err(OperatorError::NonFiniteOutput { .. })
        ));
    }

    #[test]
    fn convex_combination_examples() {
        let ids = [AveragedOp::identity(2), AveragedOp::identity(2)];
        let c = convex_combination(&ids, &[0.5, 0.5]).unwrap();
        assert_eq!(c.apply(&Point::from([3.0, -1.0])).unwrap(), Point::from([3.0, -1.0]));

        let zero = AveragedOp::constant(Point::zeros(2));
        let c = convex_combination(&[zero, AveragedOp::identity(2)], &[0.5, 0.5]).unwrap();
        assert_eq!(c.apply(&Point::from([2.0, 0.0])).unwrap(), Point::from([1.0, 0.0]));

        let c = convex_combination(&[proj_axis(2, 0), proj_axis(2, 1)], &[0.5, 0.5]).unwrap();
        assert_eq!(c.apply(&Point::from([2.0, 2.0])).unwrap(), Point::from([1.0, 1.0]));
        assert_eq!(c.alpha(), 0.5);
        assert_eq!(c.lipschitz(), Some(1.0));
    }

    #[test]
    fn convex_combination_errors() {
        assert_eq!(convex_combination(&[], &[]).unwrap_err(), OperatorError::Empty);
        let ids = [AveragedOp::identity(1), AveragedOp::identity(1)];
        assert!(matches!(
            convex_combination(&ids, &[0.5, 0.4]),
            Err(OperatorError::InvalidWeights { .. })
        ));
        assert!(matches!(
            convex_combination(&ids, &[1.5, -0.5]),
            Err(OperatorError::InvalidWeights { .. })
        ));
    }

    #[test]
    fn compose_examples() {
        let c = compose(&proj_axis(2, 1), &proj_axis(2, 0)).unwrap();
        assert_eq!(c.apply(&Point::from([3.0, 5.0])).unwrap(), Point::from([0.0, 0.0]));
        assert_eq!(c.alpha(), 1.0);

        let half = AveragedOp::scaled_identity(1, 0.5).unwrap();
        let c = compose(&half, &half).unwrap();
        assert_eq!(c.apply(&Point::from([8.0])).unwrap(), Point::from([2.0]));
        assert_eq!(c.lipschitz(), Some(0.25));

        let t = proj_nonneg(2);
        let c = compose(&AveragedOp::identity(2), &t).unwrap();
        for x in [[1.0, -1.0], [-3.0, 2.0]] {
            let x = Point::from(x);
            assert_eq!(c.apply(&x).unwrap(), t.apply(&x).unwrap());
        }
        assert!(compose(&AveragedOp::identity(1), &t).is_err());
    }

    #[test]
    fn relax_examples() {
        let t = proj_nonneg(1);
        let r = relax(&t, 1.0).unwrap();
        for v in [-2.0, 0.5, 3.0] {
            let x = Point::from([v]);
            assert_eq!(r.apply(&x).unwrap(), t.apply(&x).unwrap());
        }
        let zero = AveragedOp::constant(Point::zeros(1));
        let r = relax(&zero, 0.5).unwrap();
        assert_eq!(r.apply(&Point::from([4.0])).unwrap(), Point::from([2.0]));
        // lambda = 1 - rho/gamma with rho = 0
        let r = relax(&t, 1.0 - 0.0 / 2.0).unwrap();
        assert_eq!(r.apply(&Point::from([-1.0])).unwrap(), Point::from([0.0]));

        assert!(relax(&t, 0.0).is_err());
        assert!(relax(&t, 3.0).is_err());
        assert_eq!(relax(&t, 1.5).unwrap().alpha(), 0.75);
    }

    proptest! {
        #[test]
        fn relax_inverse_roundtrip(lambda in 0.2f64..1.0, xs in prop::collection::vec(-10.0f64..10.0, 3)) {
            let t = proj_nonneg(3);
            let r = relax(&relax(&t, lambda).unwrap(), 1.0 / lambda).unwrap();
            let x = Point::from(xs);
            let a = r.apply(&x).unwrap();
            let b = t.apply(&x).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-12 * (1.0 + x.norm()));
        }

        #[test]
        fn convex_combination_permutation_invariant(
            raw in prop::collection::vec(0.05f64..1.0, 4),
            xs in prop::collection::vec(-5.0f64..5.0, 3),
            rot in 0usize..4,
        ) {
            let total: f64 = raw.iter().sum();
            let mut w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let fix = 1.0 - w.iter().sum::<f64>();
            w[0] += fix;
            let ops = vec![
                proj_nonneg(3),
                AveragedOp::identity(3),
                AveragedOp::scaled_identity(3, -0.5).unwrap(),
                proj_axis(3, 1),
            ];
            let c1 = convex_combination(&ops, &w).unwrap();
            let mut ops2 = ops.clone();
            let mut w2 = w.clone();
            ops2.rotate_left(rot);
            w2.rotate_left(rot);
            let c2 = convex_combination(&ops2, &w2).unwrap();
            let x = Point::from(xs);
            prop_assert!(c1.apply(&x).unwrap().max_abs_diff(&c2.apply(&x).unwrap()) <= 1e-15);
        }
    }

    #[test]
    fn common_fixed_point_is_preserved() {
        let ops = [proj_nonneg(2), proj_axis(2, 0), AveragedOp::identity(2)];
        let c = convex_combination(&ops, &[0.2, 0.3, 0.5]).unwrap();
        let x = Point::from([2.5, 0.0]);
        for op in &ops {
            assert_abs_diff_eq!(op.apply(&x).unwrap().dist(&x), 0.0, epsilon = 1e-12);
        }
        assert!(c.apply(&x).unwrap().dist(&x) <= 1e-12);
    }
}
