//! Diminishing-stepsize methods for nonconvex composite constrained problems
//!
//! ```text
//! minimize f(x) + q(x)  subject to  g(x) ≤ 0,  Ax + b = 0,  x ∈ K
//! ```
//!
//! with smooth (possibly nonconvex) `f` and `g`, a weighted ℓ1 term `q`, and a
//! polyhedral set `K`. Two solvers are provided:
//!
//! * [`driver::run_algorithm1`], the general method. Each iteration computes a
//!   relaxation level κ(x) from an LP and then a direction from a strongly
//!   convex QP whose linearized constraints are relaxed by κ, so the
//!   subproblem is always feasible.
//! * [`driver::run_algorithm2`], the simplified method for convex `g` and
//!   bounded `K`. It drops κ and solves a single SQP-type subproblem.
//!
//! Both move along `x ← x + γ d(x)` with a diminishing stepsize and never
//! evaluate a penalty function; the penalty W(x; ε) is available only as a
//! diagnostic ([`driver::ghost_penalty_samples`]).

pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod format;
pub mod library;
pub mod problem;
pub mod qp;
pub mod subproblems;
pub mod surrogate;

pub use diagnostics::{
    classify_evidence, classify_point, kkt_residual, kkt_residual_with, Evidence, KktOptions, KktResidualReport, LabelKind,
    StationarityLabel, Tolerances,
};
pub use driver::{
    run, run_algorithm1, run_algorithm2, Algorithm, IterationRecord, RunOptions, RunResult, StepsizeSchedule, StopReason,
    TraceSink,
};
pub use format::{load_problem, CsvTraceWriter, ProblemDoc, RunReport};
pub use error::{DsmError, Result};
pub use library::{get_instance, LibraryInstance};
pub use problem::{NonsmoothTerm, PolyhedralSet, ProblemSpec};
pub use subproblems::{AlgoParams, DirectionResult, RelaxationReport};
pub use surrogate::{default_model, make_quadratic_linear_model, QuadraticLinearModel, SurrogateModel};
