//! Building blocks for concrete operators: projections, proximity operators,
//! resolvents of linear monotone maps, Yosida approximations, smooth scalar
//! losses and the gradient of a composed distance penalty.

mod linear;
mod penalty;
mod prox;
mod sets;
mod smooth;

pub use linear::{
    min_symmetric_eigenvalue, resolvent_linear, LinearMap, LinearResolvent, MONOTONICITY_TOLERANCE,
    POWER_ITERATION_CAP, POWER_ITERATION_TOLERANCE,
};
pub use penalty::{grad_distance_penalty, gradient_step_op, DistancePenalty, MEMBERSHIP_THRESHOLD};
pub use prox::{
    prox_l1, prox_l1_op, prox_separable, prox_separable_op, soft_threshold, yosida, ScalarPenalty,
};
pub use sets::{project, projector, ConvexSet};
pub use smooth::{sigmoid, softplus, SmoothScalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalculusError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("step {gamma} must lie in (0, {upper})")]
    StepOutOfRange { gamma: f64, upper: f64 },
    #[error("map is not monotone: symmetric part has eigenvalue {min_eigenvalue}")]
    NotMonotone { min_eigenvalue: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid set: {0}")]
    InvalidSet(String),
    #[error("invalid linear map: {0}")]
    InvalidMap(String),
    #[error("scalar function {0} is not declared even and vanishing only at zero")]
    NotEvenVanishing(String),
}
