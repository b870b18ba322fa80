//! Surrogate models (f̃, g̃) used inside the direction-finding subproblems,
//! and a sampling harness for their consistency conditions at d = 0.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{DsmError, Result};
use crate::problem::ProblemSpec;

/// Quadratic/affine data of a surrogate at a fixed x:
/// f̃(d) = linearᵀd + ½dᵀHd (+ const), g̃(d) = g_value + g_jac·d.
#[derive(Debug, Clone)]
pub struct LocalQp {
    pub linear: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub g_value: DVector<f64>,
    pub g_jac: DMatrix<f64>,
}

/// A strongly convex surrogate f̃(·;x) of f and convex surrogates g̃(·;x) of g.
pub trait SurrogateModel: fmt::Debug + Send + Sync {
    /// Declared modulus of strong convexity of f̃(·;x).
    fn strong_convexity(&self) -> f64;
    fn f_value(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> f64;
    /// Partial gradient ∇₁f̃(d;x).
    fn f_gradient(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
    fn g_value(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
    /// Rows are ∇₁g̃_i(d;x)ᵀ.
    fn g_jacobian(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64>;
    /// Quadratic/linear form at x, when the model has one. The subproblem
    /// solvers require it.
    fn local_qp(&self, problem: &ProblemSpec, x: &DVector<f64>) -> Option<LocalQp>;

    fn is_quadratic_linear(&self) -> bool {
        false
    }

    /// Tolerance used by [`check_assumption_a`] for this model.
    fn consistency_tol(&self) -> f64 {
        1e-6
    }
}

/// f̃(d;x) = ∇f(x)ᵀd + ½dᵀBd, g̃(d;x) = g(x) + ∇g(x)ᵀd.
#[derive(Debug, Clone)]
pub struct QuadraticLinearModel {
    b: DMatrix<f64>,
    c: f64,
}

impl QuadraticLinearModel {
    pub fn metric(&self) -> &DMatrix<f64> {
        &self.b
    }
}

/// Builds the classical quadratic/linear surrogate with metric `b`.
pub fn make_quadratic_linear_model(problem: &ProblemSpec, b: DMatrix<f64>) -> Result<QuadraticLinearModel> {
    let n = problem.n();
    if b.nrows() != n || b.ncols() != n {
        return Err(DsmError::ModelConstruction(format!(
            "metric is {}x{}, expected {n}x{n}",
            b.nrows(),
            b.ncols()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(DsmError::ModelConstruction("metric has non-finite entries".into()));
    }
    if (&b - b.transpose()).amax() > 1e-12 * (1.0 + b.amax()) {
        return Err(DsmError::ModelConstruction("metric is not symmetric".into()));
    }
    if b.clone().cholesky().is_none() {
        return Err(DsmError::ModelConstruction("metric is not positive definite".into()));
    }
    let c = b.clone().symmetric_eigen().eigenvalues.min();
    if c <= 0.0 {
        return Err(DsmError::ModelConstruction(format!(
            "metric has nonpositive smallest eigenvalue {c:e}"
        )));
    }
    Ok(QuadraticLinearModel { b, c })
}

/// The default model, B = I.
pub fn default_model(problem: &ProblemSpec) -> QuadraticLinearModel {
    make_quadratic_linear_model(problem, DMatrix::identity(problem.n(), problem.n()))
        .expect("identity metric is positive definite")
}

impl SurrogateModel for QuadraticLinearModel {
    fn strong_convexity(&self) -> f64 {
        self.c
    }

    fn f_value(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> f64 {
        problem.grad_f(x).dot(d) + 0.5 * d.dot(&(&self.b * d))
    }

    fn f_gradient(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        problem.grad_f(x) + &self.b * d
    }

    fn g_value(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        problem.g(x) + problem.g_jac(x) * d
    }

    fn g_jacobian(&self, problem: &ProblemSpec, _d: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        problem.g_jac(x)
    }

    fn local_qp(&self, problem: &ProblemSpec, x: &DVector<f64>) -> Option<LocalQp> {
        Some(LocalQp {
            linear: problem.grad_f(x),
            hessian: self.b.clone(),
            g_value: problem.g(x),
            g_jac: problem.g_jac(x),
        })
    }

    fn is_quadratic_linear(&self) -> bool {
        true
    }

    fn consistency_tol(&self) -> f64 {
        1e-10
    }
}

type Fv = dyn Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type Vv = dyn Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type Mv = dyn Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
type Qv = dyn Fn(&ProblemSpec, &DVector<f64>) -> LocalQp + Send + Sync;

/// Surrogate assembled from user callbacks.
#[derive(Clone)]
pub struct CallbackModel {
    c: f64,
    f_value: Arc<Fv>,
    f_gradient: Arc<Vv>,
    g_value: Arc<Vv>,
    g_jacobian: Arc<Mv>,
    local_qp: Option<Arc<Qv>>,
}

impl CallbackModel {
    pub fn new(
        strong_convexity: f64,
        f_value: impl Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        f_gradient: impl Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        g_value: impl Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        g_jacobian: impl Fn(&ProblemSpec, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            c: strong_convexity,
            f_value: Arc::new(f_value),
            f_gradient: Arc::new(f_gradient),
            g_value: Arc::new(g_value),
            g_jacobian: Arc::new(g_jacobian),
            local_qp: None,
        }
    }

    /// Attaches the quadratic/linear form so the model can drive subproblems.
    pub fn with_local_qp(
        mut self,
        local_qp: impl Fn(&ProblemSpec, &DVector<f64>) -> LocalQp + Send + Sync + 'static,
    ) -> Self {
        self.local_qp = Some(Arc::new(local_qp));
        self
    }
}

impl fmt::Debug for CallbackModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallbackModel")
            .field("strong_convexity", &self.c)
            .field("quadratic_linear", &self.local_qp.is_some())
            .finish()
    }
}

impl SurrogateModel for CallbackModel {
    fn strong_convexity(&self) -> f64 {
        self.c
    }

    fn f_value(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (self.f_value)(problem, d, x)
    }

    fn f_gradient(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        (self.f_gradient)(problem, d, x)
    }

    fn g_value(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        (self.g_value)(problem, d, x)
    }

    fn g_jacobian(&self, problem: &ProblemSpec, d: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g_jacobian)(problem, d, x)
    }

    fn local_qp(&self, problem: &ProblemSpec, x: &DVector<f64>) -> Option<LocalQp> {
        self.local_qp.as_ref().map(|f| f(problem, x))
    }

    fn is_quadratic_linear(&self) -> bool {
        self.local_qp.is_some()
    }
}

/// Checkable items of the surrogate consistency conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AssumptionItem {
    /// strong monotonicity of ∇₁f̃(·;x) with the declared modulus
    A1,
    /// ∇₁f̃(0;x) = ∇f(x)
    A4,
    /// g̃(0;x) = g(x)
    A7,
    /// ∇₁g̃(0;x) = ∇g(x)
    A9,
}

impl fmt::Display for AssumptionItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssumptionItem::A1 => "A1 (strong convexity modulus)",
            AssumptionItem::A4 => "A4 (gradient consistency of f̃ at d = 0)",
            AssumptionItem::A7 => "A7 (value consistency of g̃ at d = 0)",
            AssumptionItem::A9 => "A9 (gradient consistency of g̃ at d = 0)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ItemViolation {
    pub item: AssumptionItem,
    pub x: Vec<f64>,
    pub violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub samples: usize,
    pub tolerance: f64,
    pub max_a4: f64,
    pub max_a7: f64,
    pub max_a9: f64,
    /// Largest shortfall of the observed modulus below the declared one.
    pub max_a1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionFailure {
    pub failures: Vec<ItemViolation>,
    pub report: ConsistencyReport,
}

impl AssumptionFailure {
    pub fn failed_items(&self) -> Vec<AssumptionItem> {
        let mut items: Vec<_> = self.failures.iter().map(|f| f.item).collect();
        items.dedup();
        items
    }
}

impl fmt::Display for AssumptionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "surrogate consistency check failed:")?;
        for v in &self.failures {
            write!(f, "\n  {} violated by {:e} at x = {:?}", v.item, v.violation, v.x)?;
        }
        Ok(())
    }
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    if a.is_empty() {
        return 0.0;
    }
    (a - b).amax() / (1.0 + b.amax())
}

/// Samples points in K and checks the d = 0 identities and the declared
/// strong-convexity modulus. Deterministic for a given seed.
pub fn check_assumption_a(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    sample_count: usize,
    seed: u64,
) -> Result<ConsistencyReport> {
    if sample_count == 0 {
        return Err(DsmError::Precondition("sample_count must be at least 1".into()));
    }
    let n = problem.n();
    let tol = model.consistency_tol();
    let c = model.strong_convexity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConsistencyReport {
        samples: sample_count,
        tolerance: tol,
        max_a4: 0.0,
        max_a7: 0.0,
        max_a9: 0.0,
        max_a1: 0.0,
    };
    let mut failures = Vec::new();
    let zero = DVector::zeros(n);

    for _ in 0..sample_count {
        let x = problem.set().sample(&mut rng)?;
        let mut record = |item: AssumptionItem, v: f64, slot: &mut f64| {
            *slot = slot.max(v);
            if !(v <= tol) && !failures.iter().any(|f: &ItemViolation| f.item == item) {
                failures.push(ItemViolation {
                    item,
                    x: x.iter().copied().collect(),
                    violation: v,
                });
            }
        };

        let a4 = rel_err(&model.f_gradient(problem, &zero, &x), &problem.grad_f(&x));
        record(AssumptionItem::A4, a4, &mut report.max_a4);
        let a7 = rel_err(&model.g_value(problem, &zero, &x), &problem.g(&x));
        record(AssumptionItem::A7, a7, &mut report.max_a7);
        let jm = model.g_jacobian(problem, &zero, &x);
        let jp = problem.g_jac(&x);
        let a9 = if jm.shape() != jp.shape() {
            f64::INFINITY
        } else if jp.is_empty() {
            0.0
        } else {
            (&jm - &jp).amax() / (1.0 + jp.amax())
        };
        record(AssumptionItem::A9, a9, &mut report.max_a9);

        let d1 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let d2 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let delta = &d1 - &d2;
        let dd = delta.norm_squared();
        if dd > 1e-12 {
            let inner = (model.f_gradient(problem, &d1, &x) - model.f_gradient(problem, &d2, &x)).dot(&delta);
            let shortfall = (c - inner / dd).max(0.0);
            record(AssumptionItem::A1, shortfall, &mut report.max_a1);
        }
    }

    if failures.is_empty() {
        Ok(report)
    } else {
        failures.sort_by_key(|f| f.item as u8);
        Err(DsmError::AssumptionA(AssumptionFailure { failures, report }))
    }
}
