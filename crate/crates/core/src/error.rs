use thiserror::Error;

use crate::qp::QpStatus;
use crate::surrogate::AssumptionFailure;

#[derive(Debug, Error)]
pub enum DsmError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("model construction failed: {0}")]
    ModelConstruction(String),

    #[error("surrogate model is not quadratic/linear; subproblems need a local QP form")]
    SurrogateNotQuadratic,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("subproblem solver returned {status:?} in {context}")]
    Subsolver {
        status: QpStatus,
        context: String,
        /// JSON serialization of the offending subproblem.
        dump: String,
    },

    #[error("direction subproblem infeasible at x = {x:?}; the convex-constraint setting (convex g, linear h, bounded K, nonempty feasible set, eMFCQ) appears violated")]
    AssumptionDViolated { x: Vec<f64>, dump: String },

    #[error("{0}")]
    AssumptionA(AssumptionFailure),

    #[error("unknown library instance '{0}'")]
    UnknownInstance(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DsmError>;
