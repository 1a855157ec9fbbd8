//! Primal–dual forward-backward-forward splitting for systems of coupled
//! monotone inclusions, with a convex-minimization front end, an imaging
//! model, brute-force oracles and a JSON problem format.

// negated comparisons reject NaN on purpose; index loops mirror the block formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod builders;
pub mod checks;
pub mod demos;
pub mod error;
pub mod exec;
pub mod imaging;
pub mod linalg;
pub mod linop;
pub mod minimize;
pub mod oracle;
pub mod problem;
pub mod prox;
pub mod rng;
pub mod solver;
pub mod system;

pub use error::{FbfError, Result};
pub use exec::ExecPolicy;
pub use linop::LinOp;
pub use minimize::{build_system, dual_surrogate, primal_surrogate, MinimizationSpec, SmoothFunction};
pub use prox::{ProxFunction, ResolventOp};
pub use solver::{make_policy, solve, step, ErrorSchedule, IterateState, SolveOptions, Status, StepPolicy, TraceRecord};
pub use system::{compute_beta, extract_solution, fixed_point_residual, validate, SolutionPair, SpaceLayout, SystemSpec};
