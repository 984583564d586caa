//! Generic numerical optimization used by the dispatch and scheduling layers.

mod qp;
mod search;

pub use qp::{solve_qp, QpBuilder, QpOptions, QpProblem, QpSolution, QpStatus};
pub use search::{bisect, subgradient_max, StepRule, SubgradientOptions, SubgradientResult};
