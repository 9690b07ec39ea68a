use std::fmt;
use std::sync::Arc;

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A differentiable convex scalar function with Lipschitz derivative.
#[derive(Clone)]
pub struct SmoothScalar {
    name: Arc<str>,
    value: Arc<ScalarFn>,
    derivative: Arc<ScalarFn>,
    mu: f64,
    even_vanishing: bool,
}

impl fmt::Debug for SmoothScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothScalar")
            .field("name", &self.name)
            .field("mu", &self.mu)
            .field("even_vanishing", &self.even_vanishing)
            .finish()
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

impl SmoothScalar {
    /// A user-supplied function. `even_vanishing` asserts that the function
    /// is even, nonnegative, and zero only at zero.
    pub fn new<V, D>(name: &str, value: V, derivative: D, mu: f64, even_vanishing: bool) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        assert!(mu > 0.0, "derivative Lipschitz constant must be positive");
        SmoothScalar {
            name: Arc::from(name),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            mu,
            even_vanishing,
        }
    }

    /// `t^2 / 2`
    pub fn half_square() -> Self {
        Self::new("half_square", |t| 0.5 * t * t, |t| t, 1.0, true)
    }

    /// `t^2`
    pub fn square() -> Self {
        Self::new("square", |t| t * t, |t| 2.0 * t, 2.0, true)
    }

    /// Huber function with threshold `delta`.
    pub fn huber(delta: f64) -> Self {
        assert!(delta > 0.0);
        Self::new(
            "huber",
            move |t: f64| {
                let a = t.abs();
                if a <= delta {
                    0.5 * t * t
                } else {
                    delta * (a - 0.5 * delta)
                }
            },
            move |t: f64| t.clamp(-delta, delta),
            1.0,
            true,
        )
    }

    /// `ln cosh t`
    pub fn log_cosh() -> Self {
        Self::new(
            "log_cosh",
            |t: f64| {
                let a = t.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            },
            |t: f64| t.tanh(),
            1.0,
            true,
        )
    }

    /// `|t - eta|^2`
    pub fn squared_residual(eta: f64) -> Self {
        Self::new(
            "squared_residual",
            move |t| (t - eta) * (t - eta),
            move |t| 2.0 * (t - eta),
            2.0,
            eta == 0.0,
        )
    }

    /// `ln(1 + e^t) - eta t`, the logistic loss for a label `eta`.
    pub fn logistic(eta: f64) -> Self {
        Self::new(
            "logistic",
            move |t| softplus(t) - eta * t,
            move |t| sigmoid(t) - eta,
            0.25,
            false,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }

    /// Lipschitz constant of the derivative.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn is_even_vanishing(&self) -> bool {
        self.even_vanishing
    }
}
