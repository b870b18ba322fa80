//! Problem instances: smooth objective, weighted ℓ1 term, smooth inequality
//! constraints, linear equalities and a polyhedral ground set K.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::qp::{self, QpBuilder, QpStatus};

/// Feasibility tolerance used for membership tests in K.
pub const FEAS_TOL: f64 = 1e-8;
/// Replacement for infinite bounds inside auxiliary LPs.
const BIG_BOUND: f64 = 1e6;

/// A smooth scalar function with an analytic gradient.
pub trait ScalarFunction: fmt::Debug + Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Serializable description, when the function has one.
    fn describe(&self) -> Option<FunctionDoc> {
        None
    }
    /// `Some(true)` when convexity is known analytically.
    fn known_convex(&self) -> Option<bool> {
        None
    }
}

/// JSON description of a built-in function kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionDoc {
    /// ½ xᵀHx + cᵀx + k
    Quadratic {
        hessian: Vec<Vec<f64>>,
        linear: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    /// aᵀx + k
    Affine {
        linear: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    /// ‖x − center‖² − radius²
    Ball { center: Vec<f64>, radius: f64 },
    /// Σ_i b (x_{i+1} − x_i²)² + (a − x_i)²
    Rosenbrock {
        #[serde(default = "default_rosen_a")]
        a: f64,
        #[serde(default = "default_rosen_b")]
        b: f64,
    },
}

fn default_rosen_a() -> f64 {
    1.0
}
fn default_rosen_b() -> f64 {
    100.0
}

impl FunctionDoc {
    pub fn build(&self, n: usize) -> Result<Arc<dyn ScalarFunction>> {
        let dim_err = |what: &str| {
            DsmError::InvalidProblem(format!("{what} has wrong dimension for n = {n}"))
        };
        Ok(match self {
            FunctionDoc::Quadratic {
                hessian,
                linear,
                constant,
            } => {
                if hessian.len() != n || hessian.iter().any(|r| r.len() != n) || linear.len() != n {
                    return Err(dim_err("quadratic function"));
                }
                let h = DMatrix::from_fn(n, n, |i, j| hessian[i][j]);
                Arc::new(Quadratic::new(h, DVector::from_column_slice(linear), *constant)?)
            }
            FunctionDoc::Affine { linear, constant } => {
                if linear.len() != n {
                    return Err(dim_err("affine function"));
                }
                Arc::new(Quadratic::affine(DVector::from_column_slice(linear), *constant))
            }
            FunctionDoc::Ball { center, radius } => {
                if center.len() != n {
                    return Err(dim_err("ball constraint"));
                }
                let c = DVector::from_column_slice(center);
                let h = DMatrix::identity(n, n) * 2.0;
                let lin = &c * -2.0;
                Arc::new(Quadratic::new(h, lin, c.norm_squared() - radius * radius)?)
            }
            FunctionDoc::Rosenbrock { a, b } => {
                if n < 2 {
                    return Err(dim_err("rosenbrock function"));
                }
                Arc::new(Rosenbrock { a: *a, b: *b })
            }
        })
    }
}

/// ½ xᵀHx + cᵀx + k with symmetric H.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(DsmError::InvalidProblem("quadratic hessian dimension mismatch".into()));
        }
        if (&hessian - hessian.transpose()).amax() > 1e-12 * (1.0 + hessian.amax()) {
            return Err(DsmError::InvalidProblem("quadratic hessian must be symmetric".into()));
        }
        Ok(Self {
            hessian,
            linear,
            constant,
        })
    }

    pub fn affine(linear: DVector<f64>, constant: f64) -> Self {
        let n = linear.len();
        Self {
            hessian: DMatrix::zeros(n, n),
            linear,
            constant,
        }
    }
}

impl ScalarFunction for Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }

    fn describe(&self) -> Option<FunctionDoc> {
        let n = self.linear.len();
        Some(FunctionDoc::Quadratic {
            hessian: (0..n)
                .map(|i| (0..n).map(|j| self.hessian[(i, j)]).collect())
                .collect(),
            linear: self.linear.iter().copied().collect(),
            constant: self.constant,
        })
    }

    fn known_convex(&self) -> Option<bool> {
        let n = self.linear.len();
        if self.hessian.amax() == 0.0 {
            return Some(true);
        }
        let eig = self.hessian.clone().symmetric_eigen();
        Some(eig.eigenvalues.iter().all(|&l| l >= -1e-12 * (1.0 + self.hessian.amax())) || n == 0)
    }
}

/// Chained Rosenbrock function.
#[derive(Debug, Clone, Copy)]
pub struct Rosenbrock {
    pub a: f64,
    pub b: f64,
}

impl ScalarFunction for Rosenbrock {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (0..x.len() - 1)
            .map(|i| self.b * (x[i + 1] - x[i] * x[i]).powi(2) + (self.a - x[i]).powi(2))
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for i in 0..x.len() - 1 {
            let t = x[i + 1] - x[i] * x[i];
            g[i] += -4.0 * self.b * x[i] * t - 2.0 * (self.a - x[i]);
            g[i + 1] += 2.0 * self.b * t;
        }
        g
    }

    fn describe(&self) -> Option<FunctionDoc> {
        Some(FunctionDoc::Rosenbrock {
            a: self.a,
            b: self.b,
        })
    }
}

type ValueFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type GradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// User-supplied value/gradient callbacks.
#[derive(Clone)]
pub struct FnFunction {
    name: String,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl FnFunction {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for FnFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnFunction").field("name", &self.name).finish()
    }
}

impl ScalarFunction for FnFunction {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

/// q(x) = Σ w_i |x_i|, with w = 0 meaning q ≡ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NonsmoothTerm {
    weights: DVector<f64>,
}

impl NonsmoothTerm {
    pub fn zero(n: usize) -> Self {
        Self {
            weights: DVector::zeros(n),
        }
    }

    pub fn l1(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DsmError::InvalidProblem(
                "l1 weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.weights.iter().zip(x.iter()).map(|(w, xi)| w * xi.abs()).sum()
    }

    /// Global Lipschitz constant with respect to ‖·‖∞.
    pub fn lipschitz(&self) -> f64 {
        self.weights.sum()
    }
}

/// K = {x : lower ≤ x ≤ upper, Cx ≤ u}. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub c_mat: DMatrix<f64>,
    pub c_rhs: DVector<f64>,
}

impl PolyhedralSet {
    pub fn new(
        lower: DVector<f64>,
        upper: DVector<f64>,
        c_mat: DMatrix<f64>,
        c_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || c_mat.ncols() != n || c_mat.nrows() != c_rhs.len() {
            return Err(DsmError::InvalidProblem("polyhedral set dimension mismatch".into()));
        }
        if lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
            || c_mat.iter().chain(c_rhs.iter()).any(|v| !v.is_finite())
        {
            return Err(DsmError::InvalidProblem("polyhedral set has invalid entries".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(DsmError::InvalidProblem("lower bound exceeds upper bound".into()));
        }
        Ok(Self {
            lower,
            upper,
            c_mat,
            c_rhs,
        })
    }

    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let n = lower.len();
        Self::new(lower, upper, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    /// Unchecked constructor, used to build deliberately invalid sets in tests.
    pub fn from_parts_unchecked(
        lower: DVector<f64>,
        upper: DVector<f64>,
        c_mat: DMatrix<f64>,
        c_rhs: DVector<f64>,
    ) -> Self {
        Self {
            lower,
            upper,
            c_mat,
            c_rhs,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded_box(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    /// Largest componentwise violation of the defining inequalities.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..self.dim() {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        if !self.c_rhs.is_empty() {
            v = v.max((&self.c_mat * x - &self.c_rhs).max());
        }
        v.max(0.0)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// ∞-norm diameter of the bounding box; `None` when unbounded.
    pub fn diameter_inf(&self) -> Option<f64> {
        self.is_bounded_box().then(|| {
            (&self.upper - &self.lower)
                .iter()
                .fold(0.0, |a: f64, b| a.max(*b))
        })
    }

    /// Midpoint of the bounding box; infinite sides use the finite bound or 0.
    pub fn box_center(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            let (l, u) = (self.lower[i], self.upper[i]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l,
                (false, true) => u,
                (false, false) => 0.0,
            }
        })
    }

    fn finite_lower(&self, i: usize) -> f64 {
        self.lower[i].max(-BIG_BOUND)
    }

    fn finite_upper(&self, i: usize) -> f64 {
        self.upper[i].min(BIG_BOUND)
    }

    /// Uniform sample from the bounding box, projected onto K if necessary.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let x = DVector::from_fn(self.dim(), |i, _| {
            let (l, u) = (self.finite_lower(i).max(-1e3), self.finite_upper(i).min(1e3));
            if u > l {
                rng.gen_range(l..=u)
            } else {
                l
            }
        });
        if self.contains(&x, 0.0) {
            Ok(x)
        } else {
            project(self, &x, None)
        }
    }

    /// Phase-1 check: the box must be ordered and the LP
    /// min t s.t. Cx − t ≤ u, x in the box, t ≥ 0 must attain t ≤ tolerance.
    pub fn certify_nonempty(&self) -> bool {
        phase_one_value(self).is_some_and(|t| t <= FEAS_TOL)
    }
}

/// Minimal uniform relaxation of the halfspace rows needed to meet the box;
/// `None` when the box itself is empty or the LP fails.
pub fn phase_one_value(set: &PolyhedralSet) -> Option<f64> {
    let n = set.dim();
    if set.lower.iter().zip(set.upper.iter()).any(|(l, u)| l > u) {
        return None;
    }
    if set.c_rhs.is_empty() {
        return Some(0.0);
    }
    let mut b = QpBuilder::new(n + 1);
    b.linear_mut()[n] = 1.0;
    let mut row = vec![0.0; n + 1];
    for i in 0..n {
        row.fill(0.0);
        row[i] = -1.0;
        b.ineq(&row, -set.finite_lower(i));
        row[i] = 1.0;
        b.ineq(&row, set.finite_upper(i));
    }
    for r in 0..set.c_rhs.len() {
        row.fill(0.0);
        for j in 0..n {
            row[j] = set.c_mat[(r, j)];
        }
        row[n] = -1.0;
        b.ineq(&row, set.c_rhs[r]);
    }
    row.fill(0.0);
    row[n] = -1.0;
    b.ineq(&row, 0.0);
    let sol = qp::solve_qp(&b.build(), qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER).ok()?;
    (sol.status == QpStatus::Optimal).then(|| sol.z[n])
}

/// Euclidean projection onto K (optionally intersected with {Ax + b = 0}).
pub fn project(
    set: &PolyhedralSet,
    x: &DVector<f64>,
    equalities: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> Result<DVector<f64>> {
    let n = set.dim();
    let mut b = QpBuilder::new(n);
    b.hessian_mut().fill_with_identity();
    b.linear_mut().copy_from(&-x);
    let mut row = vec![0.0; n];
    for i in 0..n {
        row.fill(0.0);
        if set.lower[i].is_finite() {
            row[i] = -1.0;
            b.ineq(&row, -set.lower[i]);
        }
        if set.upper[i].is_finite() {
            row[i] = 1.0;
            b.ineq(&row, set.upper[i]);
        }
    }
    for r in 0..set.c_rhs.len() {
        let row: Vec<f64> = set.c_mat.row(r).iter().copied().collect();
        b.ineq(&row, set.c_rhs[r]);
    }
    if let Some((a, rhs)) = equalities {
        for r in 0..rhs.len() {
            let row: Vec<f64> = a.row(r).iter().copied().collect();
            b.eq(&row, -rhs[r]);
        }
    }
    let qp = b.build();
    let sol = qp::solve_qp(&qp, qp::DEFAULT_TOL, qp::DEFAULT_MAX_ITER)?;
    if !sol.is_optimal() {
        return Err(DsmError::Subsolver {
            status: sol.status,
            context: "projection onto K".into(),
            dump: serde_json::to_string(&qp).unwrap_or_default(),
        });
    }
    // snap tiny bound violations left by the interior-point iterate
    let mut z = sol.z;
    for i in 0..n {
        z[i] = z[i].clamp(set.lower[i], set.upper[i]);
    }
    Ok(z)
}

/// Full instance of the composite constrained problem
/// minimize f(x) + q(x) s.t. g(x) ≤ 0, Ax + b = 0, x ∈ K.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    n: usize,
    objective: Arc<dyn ScalarFunction>,
    q: NonsmoothTerm,
    constraints: Vec<Arc<dyn ScalarFunction>>,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
    set: PolyhedralSet,
    g_convex: bool,
}

pub struct ProblemBuilder {
    n: usize,
    objective: Option<Arc<dyn ScalarFunction>>,
    q: Option<NonsmoothTerm>,
    constraints: Vec<Arc<dyn ScalarFunction>>,
    eq: Option<(DMatrix<f64>, DVector<f64>)>,
    set: Option<PolyhedralSet>,
    g_convex: bool,
}

impl ProblemBuilder {
    pub fn objective(mut self, f: impl ScalarFunction + 'static) -> Self {
        self.objective = Some(Arc::new(f));
        self
    }

    pub fn objective_arc(mut self, f: Arc<dyn ScalarFunction>) -> Self {
        self.objective = Some(f);
        self
    }

    pub fn l1(mut self, weights: DVector<f64>) -> Self {
        self.q = Some(NonsmoothTerm { weights });
        self
    }

    pub fn constraint(mut self, g: impl ScalarFunction + 'static) -> Self {
        self.constraints.push(Arc::new(g));
        self
    }

    pub fn constraint_arc(mut self, g: Arc<dyn ScalarFunction>) -> Self {
        self.constraints.push(g);
        self
    }

    pub fn equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq = Some((a, b));
        self
    }

    pub fn set(mut self, set: PolyhedralSet) -> Self {
        self.set = Some(set);
        self
    }

    /// Declares every g_i convex, enabling the simplified algorithm.
    pub fn convex_constraints(mut self, flag: bool) -> Self {
        self.g_convex = flag;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        let n = self.n;
        if n == 0 {
            return Err(DsmError::InvalidProblem("dimension n must be at least 1".into()));
        }
        let objective = self
            .objective
            .ok_or_else(|| DsmError::InvalidProblem("objective missing".into()))?;
        let q = match self.q {
            Some(q) => NonsmoothTerm::l1(q.weights)?,
            None => NonsmoothTerm::zero(n),
        };
        if q.weights.len() != n {
            return Err(DsmError::InvalidProblem("l1 weight vector has wrong length".into()));
        }
        let (eq_a, eq_b) = self
            .eq
            .unwrap_or_else(|| (DMatrix::zeros(0, n), DVector::zeros(0)));
        if eq_a.ncols() != n || eq_a.nrows() != eq_b.len() {
            return Err(DsmError::InvalidProblem(format!(
                "equality matrix is {}x{}, expected {}x{n}",
                eq_a.nrows(),
                eq_a.ncols(),
                eq_b.len()
            )));
        }
        if eq_a.iter().chain(eq_b.iter()).any(|v| !v.is_finite()) {
            return Err(DsmError::InvalidProblem("equality data must be finite".into()));
        }
        let set = match self.set {
            Some(s) => s,
            None => PolyhedralSet::boxed(
                DVector::from_element(n, f64::NEG_INFINITY),
                DVector::from_element(n, f64::INFINITY),
            )?,
        };
        if set.dim() != n {
            return Err(DsmError::InvalidProblem("set K has wrong dimension".into()));
        }
        if !set.certify_nonempty() {
            return Err(DsmError::InvalidProblem("set K is empty".into()));
        }
        Ok(ProblemSpec {
            n,
            objective,
            q,
            constraints: self.constraints,
            eq_a,
            eq_b,
            set,
            g_convex: self.g_convex,
        })
    }
}

impl ProblemSpec {
    pub fn builder(n: usize) -> ProblemBuilder {
        ProblemBuilder {
            n,
            objective: None,
            q: None,
            constraints: Vec::new(),
            eq: None,
            set: None,
            g_convex: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn p(&self) -> usize {
        self.eq_b.len()
    }

    pub fn objective(&self) -> &Arc<dyn ScalarFunction> {
        &self.objective
    }

    pub fn constraints(&self) -> &[Arc<dyn ScalarFunction>] {
        &self.constraints
    }

    pub fn nonsmooth(&self) -> &NonsmoothTerm {
        &self.q
    }

    pub fn eq_a(&self) -> &DMatrix<f64> {
        &self.eq_a
    }

    pub fn eq_b(&self) -> &DVector<f64> {
        &self.eq_b
    }

    pub fn set(&self) -> &PolyhedralSet {
        &self.set
    }

    pub fn g_convex(&self) -> bool {
        self.g_convex
    }

    pub fn f(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x)
    }

    pub fn grad_f(&self, x: &DVector<f64>) -> DVector<f64> {
        self.objective.gradient(x)
    }

    pub fn q(&self, x: &DVector<f64>) -> f64 {
        self.q.value(x)
    }

    pub fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.constraints.iter().map(|g| g.value(x)))
    }

    /// m×n Jacobian; row i is ∇g_i(x)ᵀ.
    pub fn g_jac(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.m(), self.n);
        for (i, g) in self.constraints.iter().enumerate() {
            j.set_row(i, &g.gradient(x).transpose());
        }
        j
    }

    /// h(x) = Ax + b.
    pub fn h(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.eq_a * x + &self.eq_b
    }

    /// Stacked constraint Jacobian [∇g(x)ᵀ; A].
    pub fn stacked_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (m, p) = (self.m(), self.p());
        let mut j = DMatrix::zeros(m + p, self.n);
        j.view_mut((0, 0), (m, self.n)).copy_from(&self.g_jac(x));
        j.view_mut((m, 0), (p, self.n)).copy_from(&self.eq_a);
        j
    }

    /// Infeasibility measure φ(x) = max_{i,j} {g_i(x)₊, |h_j(x)|}; 0 when m = p = 0.
    pub fn phi(&self, x: &DVector<f64>) -> f64 {
        let g = self.g(x).iter().fold(0.0_f64, |a, v| a.max(*v));
        let h = self.h(x).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        g.max(h)
    }

    pub fn total_objective(&self, x: &DVector<f64>) -> f64 {
        self.f(x) + self.q(x)
    }

    /// All constraint functions report analytic convexity.
    pub fn constraints_known_convex(&self) -> bool {
        self.constraints.iter().all(|g| g.known_convex() == Some(true))
    }

    pub fn check_dims(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(DsmError::Precondition(format!(
                "point has length {}, expected {}",
                x.len(),
                self.n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DsmError::Precondition("point has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheckReport {
    pub samples: usize,
    pub max_objective_error: f64,
    pub max_constraint_error: f64,
}

/// Relative tolerance for gradient agreement.
pub const FD_REL_TOL: f64 = 1e-4;

fn central_difference(f: &dyn ScalarFunction, x: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6 * (1.0 + x.norm());
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f.value(&xp) - f.value(&xm)) / (2.0 * h)
    })
}

/// Relative discrepancy between an analytic gradient and its central-difference
/// estimate.
pub fn gradient_error(f: &dyn ScalarFunction, x: &DVector<f64>) -> f64 {
    let fd = central_difference(f, x);
    let an = f.gradient(x);
    (&fd - &an).amax() / an.amax().max(fd.amax()).max(1.0)
}

/// Checks ∇f and every ∇g_i against central differences at points sampled in K.
pub fn check_gradients(problem: &ProblemSpec, samples: usize, seed: u64) -> Result<GradientCheckReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientCheckReport {
        samples,
        max_objective_error: 0.0,
        max_constraint_error: 0.0,
    };
    for _ in 0..samples {
        let x = problem.set.sample(&mut rng)?;
        let e = gradient_error(problem.objective.as_ref(), &x);
        report.max_objective_error = report.max_objective_error.max(e);
        if e > FD_REL_TOL {
            return Err(DsmError::GradientCheck(format!(
                "objective gradient off by {e:e} (relative) at x = {:?}",
                x.as_slice()
            )));
        }
        for (i, g) in problem.constraints.iter().enumerate() {
            let e = gradient_error(g.as_ref(), &x);
            report.max_constraint_error = report.max_constraint_error.max(e);
            if e > FD_REL_TOL {
                return Err(DsmError::GradientCheck(format!(
                    "gradient of constraint {i} off by {e:e} (relative) at x = {:?}",
                    x.as_slice()
                )));
            }
        }
    }
    Ok(report)
}

/// Sampled midpoint-convexity test of every g_i over K.
pub fn midpoint_convexity_holds(problem: &ProblemSpec, samples: usize, seed: u64) -> Result<bool> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let a = problem.set.sample(&mut rng)?;
        let b = problem.set.sample(&mut rng)?;
        let mid = (&a + &b) * 0.5;
        for g in &problem.constraints {
            let lhs = g.value(&mid);
            let rhs = 0.5 * (g.value(&a) + g.value(&b));
            if lhs > rhs + 1e-10 * (1.0 + rhs.abs()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
