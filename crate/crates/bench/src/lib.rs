//! Fixed problem instances shared by the benchmarks.

use blocksplit::problems::{LeastSquares, SparseRegression};
use blocksplit::{BlockSchedule, Point, SolverConfig, SplittingProblem};

pub struct Instance {
    pub name: &'static str,
    pub problem: SplittingProblem,
    pub x0: Point,
    pub config: SolverConfig,
}

/// Lasso with 20 unknowns and 30 terms on a quasicyclic schedule with
/// covering constant 5, run for a fixed 500 steps.
pub fn lasso_fixed_steps() -> Instance {
    let (problem, _) = SparseRegression::lasso_random(20, 30, 1).build(None).expect("lasso builds");
    let schedule = BlockSchedule::quasicyclic_random(30, 5, 1).expect("valid schedule");
    Instance {
        name: "lasso_20x30_k5",
        problem,
        x0: Point::zeros(20),
        config: SolverConfig::new(schedule).max_iters(500).tol(0.0),
    }
}

/// Unit-row least squares in five unknowns with ten terms on cyclic pairs,
/// run to a residual of 1e-10.
pub fn least_squares_cyclic() -> Instance {
    let (problem, _) = LeastSquares::random_unit(5, 10, 3).build(None).expect("least squares builds");
    let schedule = BlockSchedule::cyclic(10, 2).expect("valid schedule");
    Instance {
        name: "least_squares_5x10_cyclic2",
        problem,
        x0: Point::zeros(5),
        config: SolverConfig::new(schedule).max_iters(100_000).tol(1e-10),
    }
}
