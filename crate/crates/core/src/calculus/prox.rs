use std::fmt;
use std::sync::Arc;

use super::CalculusError;
use crate::operators::{AveragedOp, Point};

/// Soft thresholding: the proximity operator of `t ||.||_1`.
pub fn prox_l1(x: &Point, t: f64) -> Result<Point, CalculusError> {
    if !(t >= 0.0) {
        return Err(CalculusError::NegativeThreshold(t));
    }
    Ok(x.map(|v| soft_threshold(v, t)))
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// The l1 prox as a firmly nonexpansive operator.
pub fn prox_l1_op(dim: usize, t: f64) -> Result<AveragedOp, CalculusError> {
    if !(t >= 0.0) {
        return Err(CalculusError::NegativeThreshold(t));
    }
    Ok(AveragedOp::new(dim, 0.5, move |x: &Point| x.map(|v| soft_threshold(v, t)))
        .expect("valid constant")
        .with_lipschitz(1.0)
        .expect("valid constant")
        .with_label("prox_l1"))
}

type CustomProx = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A convex, proper, lower semicontinuous function on `R` with a closed-form
/// proximity operator.
#[derive(Clone)]
pub enum ScalarPenalty {
    Zero,
    /// `w |v|`
    Abs(f64),
    /// `w v^2 / 2`
    HalfSquare(f64),
    /// Indicator of `[lo, hi]`.
    Interval(f64, f64),
    /// Caller-supplied `(v, gamma) -> prox_{gamma g}(v)`.
    Custom(Arc<CustomProx>),
}

impl fmt::Debug for ScalarPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarPenalty::Zero => write!(f, "Zero"),
            ScalarPenalty::Abs(w) => write!(f, "Abs({w})"),
            ScalarPenalty::HalfSquare(w) => write!(f, "HalfSquare({w})"),
            ScalarPenalty::Interval(lo, hi) => write!(f, "Interval({lo}, {hi})"),
            ScalarPenalty::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl ScalarPenalty {
    pub fn nonnegative() -> Self {
        ScalarPenalty::Interval(0.0, f64::INFINITY)
    }

    fn validate(&self) -> Result<(), CalculusError> {
        match *self {
            ScalarPenalty::Abs(w) | ScalarPenalty::HalfSquare(w) if !(w >= 0.0) => {
                Err(CalculusError::NegativeThreshold(w))
            }
            ScalarPenalty::Interval(lo, hi) if !(lo <= hi) => {
                Err(CalculusError::InvalidSet(format!("interval [{lo}, {hi}] is empty")))
            }
            _ => Ok(()),
        }
    }

    pub fn prox(&self, v: f64, gamma: f64) -> f64 {
        match self {
            ScalarPenalty::Zero => v,
            ScalarPenalty::Abs(w) => soft_threshold(v, gamma * w),
            ScalarPenalty::HalfSquare(w) => v / (1.0 + gamma * w),
            ScalarPenalty::Interval(lo, hi) => v.max(*lo).min(*hi),
            ScalarPenalty::Custom(f) => f(v, gamma),
        }
    }
}

/// Coordinatewise prox of `x -> sum_k g_k(x_k)` with step `gamma`.
pub fn prox_separable(
    x: &Point,
    penalties: &[ScalarPenalty],
    gamma: f64,
) -> Result<Point, CalculusError> {
    if penalties.len() != x.dim() {
        return Err(CalculusError::DimensionMismatch {
            expected: x.dim(),
            got: penalties.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(CalculusError::NonPositiveParameter { name: "gamma", value: gamma });
    }
    for p in penalties {
        p.validate()?;
    }
    Ok(Point::from(
        x.iter()
            .zip(penalties)
            .map(|(&v, p)| p.prox(v, gamma))
            .collect::<Vec<_>>(),
    ))
}

pub fn prox_separable_op(penalties: Vec<ScalarPenalty>, gamma: f64) -> Result<AveragedOp, CalculusError> {
    // validates once; the closure then cannot fail
    prox_separable(&Point::zeros(penalties.len()), &penalties, gamma)?;
    let dim = penalties.len();
    Ok(AveragedOp::new(dim, 0.5, move |x: &Point| {
        Point::from(
            x.iter()
                .zip(&penalties)
                .map(|(&v, p)| p.prox(v, gamma))
                .collect::<Vec<_>>(),
        )
    })
    .expect("valid constant")
    .with_lipschitz(1.0)
    .expect("valid constant")
    .with_label("prox_separable"))
}

/// Yosida approximation `(x - J(x)) / rho` given the resolvent `J` of
/// `rho A`.
pub fn yosida<J>(resolvent: J, rho: f64, x: &Point) -> Result<Point, CalculusError>
where
    J: Fn(&Point) -> Point,
{
    if !(rho > 0.0) {
        return Err(CalculusError::NonPositiveParameter { name: "rho", value: rho });
    }
    let j = resolvent(x);
    Ok(x.sub(&j).scale(1.0 / rho))
}
