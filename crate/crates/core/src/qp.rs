//! Dense primal-dual interior-point engine for convex QPs and LPs.
//!
//! Problems are posed in the canonical form
//!
//! ```text
//! minimize    ½ zᵀQz + cᵀz
//! subject to  Gz ≤ u
//!             Ez = e
//! ```
//!
//! and solved with a Mehrotra predictor-corrector iteration on the
//! quasi-definite augmented system, followed by an active-set polish. The
//! solver is a pure function of its inputs: no warm starts, no internal
//! state, bit-identical output for identical input.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Diagonal regularization on the Newton system.
pub const REGULARIZATION: f64 = 1e-10;
/// Dual growth beyond this bound triggers the infeasibility certificate check.
pub const DIVERGENCE_BOUND: f64 = 1e10;

const STEP_FRACTION: f64 = 0.995;
const CERT_TOL: f64 = 1e-7;
/// Iterations without a 10% drop in the KKT error before giving up.
const STALL_LIMIT: usize = 15;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub lam_ineq: DVector<f64>,
    pub lam_eq: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Row-wise assembly of a [`ConicQp`].
#[derive(Debug, Clone)]
pub struct QpBuilder {
    n: usize,
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    ineq_rows: Vec<f64>,
    ineq_rhs: Vec<f64>,
    eq_rows: Vec<f64>,
    eq_rhs: Vec<f64>,
}

impl QpBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            hessian: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
        }
    }

    pub fn hessian_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.hessian
    }

    pub fn linear_mut(&mut self) -> &mut DVector<f64> {
        &mut self.linear
    }

    /// Adds `rowᵀz ≤ rhs` and returns the row index.
    pub fn ineq(&mut self, row: &[f64], rhs: f64) -> usize {
        assert_eq!(row.len(), self.n);
        self.ineq_rows.extend_from_slice(row);
        self.ineq_rhs.push(rhs);
        self.ineq_rhs.len() - 1
    }

    /// Adds `rowᵀz = rhs` and returns the row index.
    pub fn eq(&mut self, row: &[f64], rhs: f64) -> usize {
        assert_eq!(row.len(), self.n);
        self.eq_rows.extend_from_slice(row);
        self.eq_rhs.push(rhs);
        self.eq_rhs.len() - 1
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn build(self) -> ConicQp {
        let k = self.ineq_rhs.len();
        let l = self.eq_rhs.len();
        ConicQp {
            hessian: self.hessian,
            linear: self.linear,
            ineq_matrix: DMatrix::from_row_slice(k, self.n, &self.ineq_rows),
            ineq_rhs: DVector::from_vec(self.ineq_rhs),
            eq_matrix: DMatrix::from_row_slice(l, self.n, &self.eq_rows),
            eq_rhs: DVector::from_vec(self.eq_rhs),
        }
    }
}

impl ConicQp {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |msg: String| Err(DsmError::InvalidProblem(msg));
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return bad(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.hessian.nrows(),
                self.hessian.ncols()
            ));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return bad("inequality block has inconsistent dimensions".into());
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return bad("equality block has inconsistent dimensions".into());
        }
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.ineq_matrix.iter().all(|v| v.is_finite())
            && self.ineq_rhs.iter().all(|v| v.is_finite())
            && self.eq_matrix.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return bad("QP data contains non-finite entries".into());
        }
        let scale = 1.0 + self.hessian.amax();
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-12 * scale {
            return bad("hessian is not symmetric".into());
        }
        if n > 0 {
            let shifted = &self.hessian + DMatrix::identity(n, n) * (REGULARIZATION * scale);
            if shifted.cholesky().is_none() {
                return bad("hessian is not positive semidefinite".into());
            }
        }
        Ok(())
    }
}

struct Residuals {
    dual: DVector<f64>,
    eq: DVector<f64>,
    ineq: DVector<f64>,
}

struct Iterate {
    z: DVector<f64>,
    s: DVector<f64>,
    lam: DVector<f64>,
    y: DVector<f64>,
}

/// Solves `qp` to absolute tolerance `tol` on stationarity, primal feasibility
/// and complementarity.
pub fn solve_qp(qp: &ConicQp, tol: f64, max_iter: usize) -> Result<QpSolution> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(DsmError::Precondition(format!(
            "QP tolerance {tol:e} outside [1e-12, 1e-4]"
        )));
    }
    qp.validate()?;
    Ok(Engine::new(qp).run(tol, max_iter, true))
}

struct Engine<'a> {
    qp: &'a ConicQp,
    n: usize,
    k: usize,
    l: usize,
}

impl<'a> Engine<'a> {
    fn new(qp: &'a ConicQp) -> Self {
        Self {
            qp,
            n: qp.num_vars(),
            k: qp.ineq_rhs.len(),
            l: qp.eq_rhs.len(),
        }
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let qp = self.qp;
        let dual = &qp.hessian * &it.z
            + &qp.linear
            + qp.ineq_matrix.tr_mul(&it.lam)
            + qp.eq_matrix.tr_mul(&it.y);
        let eq = &qp.eq_matrix * &it.z - &qp.eq_rhs;
        let ineq = &qp.ineq_matrix * &it.z + &it.s - &qp.ineq_rhs;
        Residuals { dual, eq, ineq }
    }

    /// Max of stationarity, primal infeasibility and complementarity measured
    /// on the primal point itself (slacks recomputed from z).
    fn kkt_error(&self, it: &Iterate, res: &Residuals) -> f64 {
        let qp = self.qp;
        let gz = &qp.ineq_matrix * &it.z;
        let mut err = res.dual.amax().max(res.eq.amax());
        for i in 0..self.k {
            let slack = qp.ineq_rhs[i] - gz[i];
            err = err.max((-slack).max(0.0));
            err = err.max((it.lam[i] * slack).abs());
            err = err.max((-it.lam[i]).max(0.0));
        }
        err
    }

    /// Factors the regularized augmented Newton matrix
    /// [Q, Gᵀ, Eᵀ; G, −D, 0; E, 0, 0] for the diagonal `d = s/λ`.
    fn factor(&self, d: &DVector<f64>) -> (DMatrix<f64>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) {
        let qp = self.qp;
        let (n, k, l) = (self.n, self.k, self.l);
        let dim = n + k + l;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        kkt.view_mut((n, 0), (k, n)).copy_from(&qp.ineq_matrix);
        kkt.view_mut((0, n), (n, k)).copy_from(&qp.ineq_matrix.transpose());
        kkt.view_mut((n + k, 0), (l, n)).copy_from(&qp.eq_matrix);
        kkt.view_mut((0, n + k), (n, l)).copy_from(&qp.eq_matrix.transpose());
        for i in 0..k {
            kkt[(n + i, n + i)] = -d[i];
        }
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += REGULARIZATION;
        }
        for i in n..dim {
            reg[(i, i)] -= REGULARIZATION;
        }
        (kkt, reg.lu())
    }

    fn solve_newton(
        &self,
        kkt: &DMatrix<f64>,
        lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        rhs: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let mut sol = lu.solve(rhs)?;
        // iterative refinement against the unregularized matrix
        for _ in 0..3 {
            let r = rhs - kkt * &sol;
            if r.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                break;
            }
            let corr = lu.solve(&r)?;
            sol += corr;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }

    fn initial_point(&self) -> Iterate {
        let qp = self.qp;
        let (n, k, l) = (self.n, self.k, self.l);
        // minimize ½zᵀQz + cᵀz + ½‖Gz − u‖² subject to Ez = e
        let ones = DVector::from_element(k, 1.0);
        let (kkt, lu) = self.factor(&ones);
        let mut rhs = DVector::zeros(n + k + l);
        rhs.rows_mut(0, n).copy_from(&-&qp.linear);
        rhs.rows_mut(n, k).copy_from(&qp.ineq_rhs);
        rhs.rows_mut(n + k, l).copy_from(&qp.eq_rhs);
        let sol = self
            .solve_newton(&kkt, &lu, &rhs)
            .unwrap_or_else(|| DVector::zeros(n + k + l));
        let z = sol.rows(0, n).into_owned();
        let y = sol.rows(n + k, l).into_owned();
        let lam_t = &qp.ineq_matrix * &z - &qp.ineq_rhs;
        let s_t = -&lam_t;
        let shift = |v: &DVector<f64>| {
            let alpha = -v.min();
            if k == 0 || alpha < 0.0 {
                v.clone()
            } else {
                v.add_scalar(1.0 + alpha)
            }
        };
        Iterate {
            s: shift(&s_t),
            lam: shift(&lam_t),
            z,
            y,
        }
    }

    fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for (vi, dvi) in v.iter().zip(dv.iter()) {
            if *dvi < 0.0 {
                alpha = alpha.min(-vi / dvi);
            }
        }
        alpha
    }

    fn infeasibility_certificate(&self, it: &Iterate) -> bool {
        let qp = self.qp;
        let scale = it.lam.amax().max(it.y.amax());
        if scale <= 0.0 {
            return false;
        }
        let lam = &it.lam / scale;
        let y = &it.y / scale;
        let ray = qp.ineq_matrix.tr_mul(&lam) + qp.eq_matrix.tr_mul(&y);
        let gap = qp.ineq_rhs.dot(&lam) + qp.eq_rhs.dot(&y);
        ray.amax() <= CERT_TOL * (1.0 + gap.abs()) && gap < -CERT_TOL
    }

    fn unbounded_certificate(&self, it: &Iterate) -> bool {
        let qp = self.qp;
        let scale = it.z.amax();
        if scale <= 0.0 {
            return false;
        }
        let d = &it.z / scale;
        let curvature = (&qp.hessian * &d).amax();
        let eq = (&qp.eq_matrix * &d).amax();
        let ineq = if self.k > 0 { (&qp.ineq_matrix * &d).max() } else { 0.0 };
        curvature <= CERT_TOL && eq <= CERT_TOL && ineq <= CERT_TOL && qp.linear.dot(&d) < -CERT_TOL
    }

    fn finish(&self, it: Iterate, status: QpStatus, iterations: usize) -> QpSolution {
        let res = self.residuals(&it);
        let kkt_residual = self.kkt_error(&it, &res);
        QpSolution {
            z: it.z,
            lam_ineq: it.lam,
            lam_eq: it.y,
            status,
            kkt_residual,
            iterations,
        }
    }

    /// Re-solves the equality-constrained QP on the active set guessed from an
    /// interior iterate. Near-degenerate problems (e.g. an ℓ1 subgradient on the
    /// boundary of its interval) leave the interior iterate √tol away from the
    /// solution; the polished point is exact whenever the guess is right.
    fn polish(&self, it: &Iterate, tol: f64) -> Option<Iterate> {
        let qp = self.qp;
        let (n, l) = (self.n, self.l);
        let slack = &qp.ineq_rhs - &qp.ineq_matrix * &it.z;
        let active: Vec<usize> = (0..self.k).filter(|&i| it.lam[i] > slack[i]).collect();
        let a = active.len();
        let dim = n + a + l;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                m[(n + r, j)] = qp.ineq_matrix[(i, j)];
                m[(j, n + r)] = qp.ineq_matrix[(i, j)];
            }
        }
        m.view_mut((n + a, 0), (l, n)).copy_from(&qp.eq_matrix);
        m.view_mut((0, n + a), (n, l)).copy_from(&qp.eq_matrix.transpose());
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&-&qp.linear);
        for (r, &i) in active.iter().enumerate() {
            rhs[n + r] = qp.ineq_rhs[i];
        }
        rhs.rows_mut(n + a, l).copy_from(&qp.eq_rhs);

        let delta = 1e-11 * (1.0 + m.amax());
        let mut reg = m.clone();
        for i in 0..dim {
            reg[(i, i)] += if i < n { delta } else { -delta };
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..10 {
            let r = &rhs - &m * &sol;
            if r.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                break;
            }
            sol += lu.solve(&r)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let z = sol.rows(0, n).into_owned();
        let mut lam = DVector::zeros(self.k);
        for (r, &i) in active.iter().enumerate() {
            lam[i] = sol[n + r];
        }
        let y = sol.rows(n + a, l).into_owned();
        let s = (&qp.ineq_rhs - &qp.ineq_matrix * &z).map(|v| v.max(0.0));
        let cand = Iterate { z, s, lam, y };
        let res = self.residuals(&cand);
        let err = self.kkt_error(&cand, &res);
        (err <= tol && err <= self.kkt_error(it, &self.residuals(it)).max(1e-12)).then_some(cand)
    }

    fn run(&self, tol: f64, max_iter: usize, fallback: bool) -> QpSolution {
        let qp = self.qp;
        let (n, k, l) = (self.n, self.k, self.l);
        let mut it = self.initial_point();
        let mut best_err = f64::INFINITY;
        let mut stalled = 0;
        let mut iterations = max_iter;

        for iter in 0..=max_iter {
            let res = self.residuals(&it);
            let err = self.kkt_error(&it, &res);
            let slack_resid = res.ineq.amax();
            if err <= tol && slack_resid <= tol {
                let it = self.polish(&it, tol).unwrap_or(it);
                return self.finish(it, QpStatus::Optimal, iter);
            }
            if err.is_nan() {
                break;
            }
            if it.lam.amax().max(it.y.amax()) > 1e3 && self.infeasibility_certificate(&it) {
                return self.finish(it, QpStatus::Infeasible, iter);
            }
            if it.z.amax() > 1e3 && self.unbounded_certificate(&it) {
                return self.finish(it, QpStatus::Unbounded, iter);
            }
            if it.lam.amax().max(it.y.amax()) > DIVERGENCE_BOUND || it.z.amax() > DIVERGENCE_BOUND {
                break;
            }
            if err < 0.9 * best_err {
                best_err = err;
                stalled = 0;
            } else {
                stalled += 1;
            }
            if iter == max_iter || stalled >= STALL_LIMIT {
                iterations = iter;
                break;
            }

            let mu = if k > 0 { it.s.dot(&it.lam) / k as f64 } else { 0.0 };
            let (kkt, lu) = self.factor(&it.s.component_div(&it.lam));

            let direction = |r_sl: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
                let mut rhs = DVector::zeros(n + k + l);
                rhs.rows_mut(0, n).copy_from(&-&res.dual);
                rhs.rows_mut(n, k)
                    .copy_from(&(r_sl.component_div(&it.lam) - &res.ineq));
                rhs.rows_mut(n + k, l).copy_from(&-&res.eq);
                let sol = self.solve_newton(&kkt, &lu, &rhs)?;
                let dz = sol.rows(0, n).into_owned();
                let dlam = sol.rows(n, k).into_owned();
                let dy = sol.rows(n + k, l).into_owned();
                let ds = -&res.ineq - &qp.ineq_matrix * &dz;
                Some((dz, dy, ds, dlam))
            };

            // predictor
            let r_aff = it.s.component_mul(&it.lam);
            let Some((_, _, ds_a, dl_a)) = direction(&r_aff) else { break };
            let alpha_aff = Self::max_step(&it.s, &ds_a)
                .min(Self::max_step(&it.lam, &dl_a))
                .min(1.0);
            let sigma = if k > 0 && mu > 0.0 {
                let s_a = &it.s + &ds_a * alpha_aff;
                let l_a = &it.lam + &dl_a * alpha_aff;
                let mu_aff = s_a.dot(&l_a) / k as f64;
                (mu_aff / mu).powi(3).clamp(0.0, 1.0)
            } else {
                0.0
            };

            // corrector
            let r_cc = r_aff + ds_a.component_mul(&dl_a) - DVector::from_element(k, sigma * mu);
            let Some((dz, dy, ds, dlam)) = direction(&r_cc) else { break };
            let alpha = (STEP_FRACTION * Self::max_step(&it.s, &ds).min(Self::max_step(&it.lam, &dlam))).min(1.0);

            it.z += &dz * alpha;
            it.y += &dy * alpha;
            it.s += &ds * alpha;
            it.lam += &dlam * alpha;
        }

        let status = if self.infeasibility_certificate(&it) {
            QpStatus::Infeasible
        } else if self.unbounded_certificate(&it) {
            QpStatus::Unbounded
        } else if fallback && self.phase_one_infeasible(tol, max_iter) {
            QpStatus::Infeasible
        } else {
            QpStatus::MaxIter
        };
        self.finish(it, status, iterations)
    }

    /// Decides feasibility through min t s.t. Gz − t ≤ u, |Ez − e| ≤ t, t ≥ 0.
    /// Used when the main iteration stalls without a ray certificate.
    fn phase_one_infeasible(&self, tol: f64, max_iter: usize) -> bool {
        let qp = self.qp;
        let n = self.n;
        let mut b = QpBuilder::new(n + 1);
        b.linear_mut()[n] = 1.0;
        let mut row = vec![0.0; n + 1];
        row[n] = -1.0;
        b.ineq(&row, 0.0);
        for i in 0..self.k {
            row[..n].copy_from_slice(qp.ineq_matrix.row(i).transpose().as_slice());
            b.ineq(&row, qp.ineq_rhs[i]);
        }
        for i in 0..self.l {
            row[..n].copy_from_slice(qp.eq_matrix.row(i).transpose().as_slice());
            b.ineq(&row, qp.eq_rhs[i]);
            row[..n].iter_mut().for_each(|v| *v = -*v);
            b.ineq(&row, -qp.eq_rhs[i]);
        }
        let lp = b.build();
        let sol = Engine::new(&lp).run(tol, max_iter, false);
        sol.status == QpStatus::Optimal && sol.z[n] > 10.0 * tol.max(1e-9)
    }
}
