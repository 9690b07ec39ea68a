//! Block-iterative splitting for common fixed points of averaged operators.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod harness;
pub mod operators;
pub mod problems;
pub mod schedules;
pub mod solver;

pub use operators::{AveragedOp, OperatorError, Point, Weights};
pub use schedules::{BlockSchedule, ScheduleError};
pub use solver::{
    run, run_economical, RunOutcome, SolverConfig, SolverError, SplittingProblem, Trace, TraceRecord,
};
