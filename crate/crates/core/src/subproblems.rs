//! The relaxation LP defining κ(x), the general direction subproblem and the
//! convex-constraint direction subproblem, all posed for the interior-point
//! engine in [`crate::qp`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::problem::ProblemSpec;
use crate::qp::{self, ConicQp, QpBuilder, QpSolution, QpStatus};
use crate::surrogate::{LocalQp, SurrogateModel};

/// Fallback β when K has no finite bounding box.
const BETA_UNBOUNDED: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoParams {
    /// ∞-norm cap on the direction in the general subproblem.
    pub beta: f64,
    /// Radius of the relaxation LP, in (0, beta).
    pub rho: f64,
    /// Relaxation weight, in (0, 1).
    pub lambda: f64,
    pub gamma0: f64,
    pub gamma_exponent: f64,
    pub tol_d: f64,
    pub tol_theta: f64,
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub multiplier_blowup: f64,
    pub max_iter: usize,
    pub ghost_eps_grid: Vec<f64>,
    /// Tolerance handed to the inner QP/LP solver.
    pub qp_tol: f64,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            beta: 10.0,
            rho: 1.0,
            lambda: 0.5,
            gamma0: 1.0,
            gamma_exponent: 0.7,
            tol_d: 1e-7,
            tol_theta: 1e-9,
            tol_feas: 1e-8,
            tol_kkt: 1e-6,
            multiplier_blowup: 1e6,
            max_iter: 10_000,
            ghost_eps_grid: vec![1.0, 0.1, 0.01],
            qp_tol: qp::DEFAULT_TOL,
        }
    }
}

impl AlgoParams {
    /// Defaults with β = 10·(1 + diam∞(K)) and ρ = min(1, β/2).
    pub fn for_problem(problem: &ProblemSpec) -> Self {
        let beta = problem
            .set()
            .diameter_inf()
            .map_or(BETA_UNBOUNDED, |d| 10.0 * (1.0 + d));
        Self {
            beta,
            rho: (beta / 2.0).min(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DsmError::InvalidParams(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be positive and finite, got {}", self.beta));
        }
        if !(self.rho > 0.0 && self.rho < self.beta) {
            return fail(format!("rho must lie in (0, beta), got {}", self.rho));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return fail(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= 1.0) {
            return fail(format!("gamma0 must lie in (0, 1], got {}", self.gamma0));
        }
        if !(self.gamma_exponent > 0.5 && self.gamma_exponent <= 1.0) {
            return fail(format!("gamma exponent must lie in (0.5, 1], got {}", self.gamma_exponent));
        }
        for (name, v) in [
            ("tol_d", self.tol_d),
            ("tol_theta", self.tol_theta),
            ("tol_feas", self.tol_feas),
            ("tol_kkt", self.tol_kkt),
            ("multiplier_blowup", self.multiplier_blowup),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iter == 0 {
            return fail("max_iter must be at least 1".into());
        }
        if self.ghost_eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return fail("ghost epsilon grid entries must be positive".into());
        }
        if !(1e-12..=1e-4).contains(&self.qp_tol) {
            return fail(format!("qp_tol must lie in [1e-12, 1e-4], got {}", self.qp_tol));
        }
        Ok(())
    }
}

/// φ(x), the relaxation LP value, κ(x) and θ(x) at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationReport {
    pub phi: f64,
    pub inner_min: f64,
    pub kappa: f64,
    pub theta: f64,
    /// A minimizer of the relaxation LP; reported for diagnostics only.
    pub d_tilde: DVector<f64>,
}

/// Indices of constraints binding at the subproblem solution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub inequalities: Vec<usize>,
    pub equalities_upper: Vec<usize>,
    pub equalities_lower: Vec<usize>,
    pub lower_bounds: Vec<usize>,
    pub upper_bounds: Vec<usize>,
    pub halfspaces: Vec<usize>,
    /// Coordinates where ‖d‖∞ ≤ β binds rather than a bound of K.
    pub beta_cap: Vec<usize>,
}

/// Multipliers of the constraints describing x + d ∈ K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMultipliers {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub halfspace: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub d: DVector<f64>,
    /// Multipliers ξ of the linearized inequalities.
    pub xi: DVector<f64>,
    /// Multipliers π of the linearized equalities.
    pub pi: DVector<f64>,
    pub subproblem_objective: f64,
    pub active_set: ActiveSet,
    pub set_multipliers: SetMultipliers,
    /// Element of ∂q(x + d) certified by the subproblem duals.
    pub l1_subgradient: DVector<f64>,
    pub solver_status: QpStatus,
    pub solver_residual: f64,
}

impl DirectionResult {
    pub fn d_norm(&self) -> f64 {
        self.d.amax()
    }

    /// ‖(ξ, π)‖₁.
    pub fn multiplier_norm(&self) -> f64 {
        self.xi.iter().chain(self.pi.iter()).map(|v| v.abs()).sum()
    }
}

fn local_form(model: &dyn SurrogateModel, problem: &ProblemSpec, x: &DVector<f64>) -> Result<LocalQp> {
    model
        .local_qp(problem, x)
        .ok_or(DsmError::SurrogateNotQuadratic)
}

fn check_in_set(problem: &ProblemSpec, x: &DVector<f64>, tol: f64) -> Result<()> {
    problem.check_dims(x)?;
    let v = problem.set().max_violation(x);
    if v > tol {
        return Err(DsmError::Precondition(format!(
            "x violates K by {v:e} (tolerance {tol:e})"
        )));
    }
    Ok(())
}

fn subsolver_error(sol: &QpSolution, qp: &ConicQp, context: &str) -> DsmError {
    DsmError::Subsolver {
        status: sol.status,
        context: context.into(),
        dump: serde_json::to_string(qp).unwrap_or_default(),
    }
}

fn row(v: impl Iterator<Item = f64>, width: usize) -> Vec<f64> {
    let mut r: Vec<f64> = v.collect();
    r.resize(width, 0.0);
    r
}

/// Computes κ(x) by solving
/// min t s.t. t ≥ 0, t ≥ g̃_i(d;x), t ≥ ±h̃_j(d;x), ‖d‖∞ ≤ ρ, x + d ∈ K.
pub fn compute_kappa(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    x: &DVector<f64>,
    params: &AlgoParams,
) -> Result<RelaxationReport> {
    check_in_set(problem, x, params.tol_feas)?;
    let n = problem.n();
    if problem.m() == 0 && problem.p() == 0 {
        return Ok(RelaxationReport {
            phi: 0.0,
            inner_min: 0.0,
            kappa: 0.0,
            theta: 0.0,
            d_tilde: DVector::zeros(n),
        });
    }
    let local = local_form(model, problem, x)?;
    let phi = problem.phi(x);
    let h = problem.h(x);
    let a = problem.eq_a();
    let set = problem.set();
    let nv = n + 1;

    let mut b = QpBuilder::new(nv);
    b.linear_mut()[n] = 1.0;
    let mut t_only = vec![0.0; nv];
    t_only[n] = -1.0;
    b.ineq(&t_only, 0.0);
    for i in 0..problem.m() {
        let mut r = row(local.g_jac.row(i).iter().copied(), nv);
        r[n] = -1.0;
        b.ineq(&r, -local.g_value[i]);
    }
    for j in 0..problem.p() {
        let mut r = row(a.row(j).iter().copied(), nv);
        r[n] = -1.0;
        b.ineq(&r, -h[j]);
        let mut r = row(a.row(j).iter().map(|v| -v), nv);
        r[n] = -1.0;
        b.ineq(&r, h[j]);
    }
    let mut e = vec![0.0; nv];
    for k in 0..n {
        e.fill(0.0);
        e[k] = 1.0;
        b.ineq(&e, params.rho.min(set.upper[k] - x[k]));
        e[k] = -1.0;
        b.ineq(&e, params.rho.min(x[k] - set.lower[k]));
    }
    let cx = &set.c_mat * x;
    for r in 0..set.c_rhs.len() {
        b.ineq(&row(set.c_mat.row(r).iter().copied(), nv), set.c_rhs[r] - cx[r]);
    }

    let lp = b.build();
    let sol = qp::solve_qp(&lp, params.qp_tol, qp::DEFAULT_MAX_ITER)?;
    if !sol.is_optimal() {
        return Err(subsolver_error(&sol, &lp, "relaxation LP"));
    }
    // d = 0 is feasible with value φ, so the optimum cannot exceed it
    let inner_min = sol.z[n].clamp(0.0, phi);
    let kappa = (1.0 - params.lambda) * phi + params.lambda * inner_min;
    Ok(RelaxationReport {
        phi,
        inner_min,
        kappa,
        theta: phi - kappa,
        d_tilde: sol.z.rows(0, n).into_owned(),
    })
}

/// Row bookkeeping shared by both direction subproblems.
struct Layout {
    n: usize,
    l1_vars: Vec<usize>,
    g_rows: Vec<usize>,
    h_upper: Vec<usize>,
    h_lower: Vec<usize>,
    h_eq: Vec<usize>,
    lower_rows: Vec<Option<(usize, bool)>>,
    upper_rows: Vec<Option<(usize, bool)>>,
    c_rows: Vec<usize>,
    l1_rows: Vec<(usize, usize)>,
}

enum EqualityMode {
    /// −κ ≤ h̃(d;x) ≤ κ
    Band(f64),
    /// h̃(d;x) = 0
    Exact,
}

fn build_direction_qp(
    problem: &ProblemSpec,
    local: &LocalQp,
    x: &DVector<f64>,
    g_rhs_shift: f64,
    eq_mode: EqualityMode,
    beta: Option<f64>,
) -> (ConicQp, Layout) {
    let n = problem.n();
    let w = problem.nonsmooth().weights();
    let l1_vars: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let nv = n + l1_vars.len();
    let set = problem.set();
    let a = problem.eq_a();
    let h = problem.h(x);

    let mut b = QpBuilder::new(nv);
    b.hessian_mut().view_mut((0, 0), (n, n)).copy_from(&local.hessian);
    b.linear_mut().rows_mut(0, n).copy_from(&local.linear);
    for (k, &i) in l1_vars.iter().enumerate() {
        b.linear_mut()[n + k] = w[i];
    }

    let g_rows = (0..problem.m())
        .map(|i| b.ineq(&row(local.g_jac.row(i).iter().copied(), nv), g_rhs_shift - local.g_value[i]))
        .collect();

    let (mut h_upper, mut h_lower, mut h_eq) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..problem.p() {
        match eq_mode {
            EqualityMode::Band(kappa) => {
                h_upper.push(b.ineq(&row(a.row(j).iter().copied(), nv), kappa - h[j]));
                h_lower.push(b.ineq(&row(a.row(j).iter().map(|v| -v), nv), kappa + h[j]));
            }
            EqualityMode::Exact => h_eq.push(b.eq(&row(a.row(j).iter().copied(), nv), -h[j])),
        }
    }

    let beta = beta.unwrap_or(f64::INFINITY);
    let mut lower_rows = vec![None; n];
    let mut upper_rows = vec![None; n];
    let mut e = vec![0.0; nv];
    for k in 0..n {
        e.fill(0.0);
        let up = set.upper[k] - x[k];
        let lo = x[k] - set.lower[k];
        if up.min(beta).is_finite() {
            e[k] = 1.0;
            upper_rows[k] = Some((b.ineq(&e, up.min(beta)), beta < up));
        }
        if lo.min(beta).is_finite() {
            e[k] = -1.0;
            lower_rows[k] = Some((b.ineq(&e, lo.min(beta)), beta < lo));
        }
    }
    let cx = &set.c_mat * x;
    let c_rows = (0..set.c_rhs.len())
        .map(|r| b.ineq(&row(set.c_mat.row(r).iter().copied(), nv), set.c_rhs[r] - cx[r]))
        .collect();

    // −u ≤ x + d ≤ u
    let mut l1_rows = Vec::with_capacity(l1_vars.len());
    for (k, &i) in l1_vars.iter().enumerate() {
        e.fill(0.0);
        e[i] = 1.0;
        e[n + k] = -1.0;
        let plus = b.ineq(&e, -x[i]);
        e[i] = -1.0;
        let minus = b.ineq(&e, x[i]);
        l1_rows.push((plus, minus));
    }

    (
        b.build(),
        Layout {
            n,
            l1_vars,
            g_rows,
            h_upper,
            h_lower,
            h_eq,
            lower_rows,
            upper_rows,
            c_rows,
            l1_rows,
        },
    )
}

const ACTIVE_TOL: f64 = 1e-7;

fn extract(qp: &ConicQp, layout: &Layout, sol: &QpSolution) -> DirectionResult {
    let n = layout.n;
    let lam = &sol.lam_ineq;
    let slack = &qp.ineq_rhs - &qp.ineq_matrix * &sol.z;
    let active = |r: usize| slack[r] <= ACTIVE_TOL * (1.0 + qp.ineq_rhs[r].abs()) && lam[r] > ACTIVE_TOL;

    let xi = DVector::from_iterator(layout.g_rows.len(), layout.g_rows.iter().map(|&r| lam[r]));
    let pi = if !layout.h_eq.is_empty() {
        DVector::from_iterator(layout.h_eq.len(), layout.h_eq.iter().map(|&r| sol.lam_eq[r]))
    } else {
        DVector::from_iterator(
            layout.h_upper.len(),
            layout
                .h_upper
                .iter()
                .zip(layout.h_lower.iter())
                .map(|(&u, &l)| lam[u] - lam[l]),
        )
    };

    let mut active_set = ActiveSet {
        inequalities: layout.g_rows.iter().enumerate().filter(|(_, &r)| active(r)).map(|(i, _)| i).collect(),
        equalities_upper: layout.h_upper.iter().enumerate().filter(|(_, &r)| active(r)).map(|(i, _)| i).collect(),
        equalities_lower: layout.h_lower.iter().enumerate().filter(|(_, &r)| active(r)).map(|(i, _)| i).collect(),
        halfspaces: layout.c_rows.iter().enumerate().filter(|(_, &r)| active(r)).map(|(i, _)| i).collect(),
        ..ActiveSet::default()
    };
    let mut set_mult = SetMultipliers {
        lower: DVector::zeros(n),
        upper: DVector::zeros(n),
        halfspace: DVector::from_iterator(layout.c_rows.len(), layout.c_rows.iter().map(|&r| lam[r])),
    };
    for k in 0..n {
        if let Some((r, is_beta)) = layout.upper_rows[k] {
            if active(r) {
                if is_beta {
                    active_set.beta_cap.push(k);
                } else {
                    active_set.upper_bounds.push(k);
                }
            }
            if !is_beta {
                set_mult.upper[k] = lam[r];
            }
        }
        if let Some((r, is_beta)) = layout.lower_rows[k] {
            if active(r) {
                if is_beta {
                    active_set.beta_cap.push(k);
                } else {
                    active_set.lower_bounds.push(k);
                }
            }
            if !is_beta {
                set_mult.lower[k] = lam[r];
            }
        }
    }

    let mut l1_subgradient = DVector::zeros(n);
    for (k, &i) in layout.l1_vars.iter().enumerate() {
        let (plus, minus) = layout.l1_rows[k];
        l1_subgradient[i] = lam[plus] - lam[minus];
    }

    let d = sol.z.rows(0, n).into_owned();
    let x_obj = qp.objective(&sol.z);
    DirectionResult {
        d,
        xi,
        pi,
        subproblem_objective: x_obj,
        active_set,
        set_multipliers: set_mult,
        l1_subgradient,
        solver_status: sol.status,
        solver_residual: sol.kkt_residual,
    }
}

/// Solves the general direction subproblem
/// min f̃(d;x) + q(x+d) s.t. g̃(d;x) ≤ κ, |h̃(d;x)| ≤ κ, ‖d‖∞ ≤ β, x + d ∈ K.
pub fn solve_direction_general(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    x: &DVector<f64>,
    kappa: f64,
    params: &AlgoParams,
) -> Result<DirectionResult> {
    check_in_set(problem, x, params.tol_feas)?;
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(DsmError::Precondition(format!("kappa must be finite and nonnegative, got {kappa}")));
    }
    let local = local_form(model, problem, x)?;
    let eq_mode = if kappa > 0.0 {
        EqualityMode::Band(kappa)
    } else {
        EqualityMode::Exact
    };
    let (qp, layout) = build_direction_qp(problem, &local, x, kappa, eq_mode, Some(params.beta));
    let sol = qp::solve_qp(&qp, params.qp_tol, qp::DEFAULT_MAX_ITER)?;
    if !sol.is_optimal() {
        return Err(subsolver_error(&sol, &qp, "general direction subproblem"));
    }
    Ok(extract(&qp, &layout, &sol))
}

/// Solves the convex-constraint subproblem
/// min f̃(d;x) + q(x+d) s.t. g(x) + ∇g(x)ᵀd ≤ 0, A(x+d) + b = 0, x + d ∈ K.
pub fn solve_direction_convex(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    x: &DVector<f64>,
    params: &AlgoParams,
) -> Result<DirectionResult> {
    if !problem.g_convex() {
        return Err(DsmError::Configuration(
            "the convex-constraint subproblem needs a problem flagged with convex g".into(),
        ));
    }
    check_in_set(problem, x, params.tol_feas)?;
    let h_err = problem.h(x).amax();
    if problem.p() > 0 && h_err > params.tol_feas {
        return Err(DsmError::Precondition(format!(
            "x violates Ax + b = 0 by {h_err:e}; project the starting point first"
        )));
    }
    let mut local = local_form(model, problem, x)?;
    // the constraints are always linearized here, whatever g̃ the model uses
    local.g_value = problem.g(x);
    local.g_jac = problem.g_jac(x);
    let (qp, layout) = build_direction_qp(problem, &local, x, 0.0, EqualityMode::Exact, None);
    let sol = qp::solve_qp(&qp, params.qp_tol, qp::DEFAULT_MAX_ITER)?;
    match sol.status {
        QpStatus::Optimal => Ok(extract(&qp, &layout, &sol)),
        QpStatus::Infeasible => Err(DsmError::AssumptionDViolated {
            x: x.iter().copied().collect(),
            dump: serde_json::to_string(&qp).unwrap_or_default(),
        }),
        _ => Err(subsolver_error(&sol, &qp, "convex direction subproblem")),
    }
}

/// θ(x) ≤ ‖[∇g(x)ᵀ; A]‖∞ ‖d‖∞ + 1e-8.
pub fn theta_upper_bound_check(problem: &ProblemSpec, x: &DVector<f64>, d: &DVector<f64>, theta: f64) -> bool {
    theta <= theta_upper_bound(problem, x, d) + 1e-8
}

pub fn theta_upper_bound(problem: &ProblemSpec, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let j = problem.stacked_jacobian(x);
    let row_sum = j
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    row_sum * d.amax()
}

/// Convenience: the stacked multiplier vector (ξ, π).
pub fn stacked_multipliers(dir: &DirectionResult) -> DVector<f64> {
    let mut v = DVector::zeros(dir.xi.len() + dir.pi.len());
    v.rows_mut(0, dir.xi.len()).copy_from(&dir.xi);
    v.rows_mut(dir.xi.len(), dir.pi.len()).copy_from(&dir.pi);
    v
}
