use super::{CalculusError, ConvexSet, LinearMap, SmoothScalar};
use crate::operators::{AveragedOp, Point};

/// Below this distance `Lx` is treated as a member of `D` and the gradient
/// is zero.
pub const MEMBERSHIP_THRESHOLD: f64 = 1e-14;

/// The smooth penalty `x -> phi(d_D(L x))` for an even `phi` vanishing only
/// at zero.
#[derive(Clone, Debug)]
pub struct DistancePenalty {
    phi: SmoothScalar,
    map: LinearMap,
    set: ConvexSet,
}

impl DistancePenalty {
    pub fn new(phi: SmoothScalar, map: LinearMap, set: ConvexSet) -> Result<Self, CalculusError> {
        if !phi.is_even_vanishing() {
            return Err(CalculusError::NotEvenVanishing(phi.name().to_string()));
        }
        if map.codomain() != set.dim() {
            return Err(CalculusError::DimensionMismatch {
                expected: map.codomain(),
                got: set.dim(),
            });
        }
        Ok(DistancePenalty { phi, map, set })
    }

    pub fn dim(&self) -> usize {
        self.map.domain()
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.phi.value(self.set.distance(&self.map.apply(x)))
    }

    pub fn gradient(&self, x: &Point) -> Point {
        let lx = self.map.apply(x);
        let p = self.set.project_unchecked(&lx);
        let r = lx.sub(&p);
        let d = r.norm();
        if d <= MEMBERSHIP_THRESHOLD {
            return Point::zeros(x.dim());
        }
        self.map.adjoint(&r).scale(self.phi.derivative(d) / d)
    }

    /// Lipschitz constant of the gradient, `mu ||L||^2`.
    pub fn lipschitz(&self) -> f64 {
        self.phi.mu() * self.map.norm() * self.map.norm()
    }

    /// `Id - gamma grad`, averaged with constant `gamma / (2 beta)` where
    /// `beta = 1 / lipschitz`.
    pub fn gradient_step(&self, gamma: f64) -> Result<AveragedOp, CalculusError> {
        gradient_step_op(self.dim(), self.lipschitz(), gamma, {
            let me = self.clone();
            move |x: &Point| me.gradient(x)
        })
    }
}

/// `(phi'(d)/d) L^*(L x - P_D L x)` with `d = d_D(L x)`, or zero when `L x`
/// lies in `D`.
pub fn grad_distance_penalty(
    phi: &SmoothScalar,
    map: &LinearMap,
    set: &ConvexSet,
    x: &Point,
) -> Result<Point, CalculusError> {
    if x.dim() != map.domain() {
        return Err(CalculusError::DimensionMismatch {
            expected: map.domain(),
            got: x.dim(),
        });
    }
    Ok(DistancePenalty::new(phi.clone(), map.clone(), set.clone())?.gradient(x))
}

/// The explicit step `Id - gamma G` for a gradient `G` with Lipschitz
/// constant `lipschitz`, declared `gamma * lipschitz / 2`-averaged.
pub fn gradient_step_op<G>(
    dim: usize,
    lipschitz: f64,
    gamma: f64,
    grad: G,
) -> Result<AveragedOp, CalculusError>
where
    G: Fn(&Point) -> Point + Send + Sync + 'static,
{
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(CalculusError::NonPositiveParameter { name: "lipschitz", value: lipschitz });
    }
    let upper = 2.0 / lipschitz;
    if !(gamma > 0.0 && gamma < upper) {
        return Err(CalculusError::StepOutOfRange { gamma, upper });
    }
    let alpha = gamma * lipschitz / 2.0;
    let op = AveragedOp::new(dim, alpha, move |x: &Point| {
        let mut y = x.clone();
        y.axpy(-gamma, &grad(x));
        y
    })
    .expect("alpha lies in (0, 1)")
    .with_label("gradient_step");
    // a cocoercive step is nonexpansive
    Ok(op.with_lipschitz(1.0).expect("valid constant"))
}
