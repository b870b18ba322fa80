//! KKT residuals and the numerical stationarity classification of terminal
//! points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::problem::ProblemSpec;
use crate::subproblems::{AlgoParams, DirectionResult, RelaxationReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResidualReport {
    /// dist(0, ∇f + ∂q + ∇g ξ + Aᵀπ + N_K(x)) in the 2-norm.
    pub stationarity_residual: f64,
    /// max_i |ξ_i g_i(x)|
    pub complementarity_residual: f64,
    /// φ(x)
    pub primal_infeasibility: f64,
}

impl KktResidualReport {
    /// Stationarity and complementarity combined.
    pub fn combined(&self) -> f64 {
        self.stationarity_residual.max(self.complementarity_residual)
    }
}

/// Thresholds used to build N_K(x) and ∂q(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktOptions {
    /// A bound or row of K is treated as active within this distance.
    pub activity_tol: f64,
    /// |x_i| below this is treated as zero for the ℓ1 subdifferential.
    pub zero_tol: f64,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self {
            activity_tol: 1e-8,
            zero_tol: 1e-10,
        }
    }
}

impl KktOptions {
    /// Widens both thresholds to cover a pending step of size `d_norm`: a
    /// point within ‖d‖∞ of a vertex or of a zero coordinate should see it.
    pub fn widened(self, d_norm: f64) -> Self {
        let w = 10.0 * d_norm + 1e-8;
        Self {
            activity_tol: self.activity_tol.max(w),
            zero_tol: self.zero_tol.max(w),
        }
    }
}

pub fn kkt_residual(problem: &ProblemSpec, x: &DVector<f64>, xi: &DVector<f64>, pi: &DVector<f64>) -> KktResidualReport {
    kkt_residual_with(problem, x, xi, pi, KktOptions::default())
}

pub fn kkt_residual_with(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    xi: &DVector<f64>,
    pi: &DVector<f64>,
    opts: KktOptions,
) -> KktResidualReport {
    let n = problem.n();
    let g = problem.g(x);
    let mut v = problem.grad_f(x);
    if problem.m() > 0 {
        v += problem.g_jac(x).tr_mul(xi);
    }
    if problem.p() > 0 {
        v += problem.eq_a().tr_mul(pi);
    }

    // min ‖v + ρ + Nμ‖ over ρ in the ℓ1 box and μ ≥ 0; fixed ρ entries fold into v
    let w = problem.nonsmooth().weights();
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        if x[i].abs() <= opts.zero_tol {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            columns.push(e);
            lo.push(-w[i]);
            hi.push(w[i]);
        } else {
            v[i] += w[i] * x[i].signum();
        }
    }
    let set = problem.set();
    for i in 0..n {
        if x[i] - set.lower[i] <= opts.activity_tol {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            columns.push(e);
            lo.push(0.0);
            hi.push(f64::INFINITY);
        }
        if set.upper[i] - x[i] <= opts.activity_tol {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            columns.push(e);
            lo.push(0.0);
            hi.push(f64::INFINITY);
        }
    }
    if !set.c_rhs.is_empty() {
        let cx = &set.c_mat * x;
        for r in 0..set.c_rhs.len() {
            if set.c_rhs[r] - cx[r] <= opts.activity_tol {
                columns.push(set.c_mat.row(r).transpose());
                lo.push(0.0);
                hi.push(f64::INFINITY);
            }
        }
    }

    let stationarity = if columns.is_empty() {
        v.norm()
    } else {
        let m = DMatrix::from_columns(&columns);
        let y = bvls(&m, &(-&v), &lo, &hi);
        (&m * &y + &v).norm()
    };
    let complementarity = g
        .iter()
        .zip(xi.iter())
        .map(|(gi, li)| (gi * li).abs())
        .fold(0.0, f64::max);
    KktResidualReport {
        stationarity_residual: stationarity,
        complementarity_residual: complementarity,
        primal_infeasibility: problem.phi(x),
    }
}

/// Bounded-variable least squares: min ‖My − b‖₂ s.t. lo ≤ y ≤ hi, with
/// finite `lo`. Active-set iteration in the Lawson–Hanson style.
fn bvls(m: &DMatrix<f64>, b: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Lower,
        Upper,
        Free,
    }
    let k = m.ncols();
    let mut y = DVector::from_column_slice(lo);
    let mut state = vec![State::Lower; k];
    // entries whose last release made no progress; excluded until y changes
    let mut blocked = vec![false; k];
    let max_outer = 10 * (k + 1) + 50;

    for _ in 0..max_outer {
        let grad = m.tr_mul(&(b - m * &y));
        let mut best = None;
        let mut best_val = 1e-14 * (1.0 + b.amax()) * (1.0 + m.amax());
        for j in 0..k {
            if blocked[j] {
                continue;
            }
            let val = match state[j] {
                State::Lower => grad[j],
                State::Upper => -grad[j],
                State::Free => continue,
            };
            if val > best_val {
                best_val = val;
                best = Some(j);
            }
        }
        let Some(enter) = best else { break };
        state[enter] = State::Free;

        let mut progressed = false;
        for _ in 0..=k {
            let free: Vec<usize> = (0..k).filter(|&j| state[j] == State::Free).collect();
            if free.is_empty() {
                break;
            }
            let fixed_part = {
                let mut r = b.clone();
                for j in 0..k {
                    if state[j] != State::Free {
                        r -= m.column(j) * y[j];
                    }
                }
                r
            };
            let mf = m.select_columns(free.iter());
            let Ok(zf) = mf.clone().svd(true, true).solve(&fixed_part, 1e-12) else {
                break;
            };
            let inside = free
                .iter()
                .zip(zf.iter())
                .all(|(&j, &z)| z > lo[j] && z < hi[j]);
            if inside {
                for (&j, &z) in free.iter().zip(zf.iter()) {
                    progressed |= z != y[j];
                    y[j] = z;
                }
                break;
            }
            // step toward zf as far as the bounds allow
            let mut alpha: f64 = 1.0;
            for (&j, &z) in free.iter().zip(zf.iter()) {
                let dz = z - y[j];
                if z <= lo[j] && dz < 0.0 {
                    alpha = alpha.min((lo[j] - y[j]) / dz);
                } else if z >= hi[j] && dz > 0.0 {
                    alpha = alpha.min((hi[j] - y[j]) / dz);
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (&j, &z) in free.iter().zip(zf.iter()) {
                let new = y[j] + alpha * (z - y[j]);
                progressed |= new != y[j];
                y[j] = new;
                if y[j] <= lo[j] + 1e-15 * (1.0 + lo[j].abs()) {
                    y[j] = lo[j];
                    state[j] = State::Lower;
                } else if y[j] >= hi[j] - 1e-15 * (1.0 + hi[j].abs()) {
                    y[j] = hi[j];
                    state[j] = State::Upper;
                }
            }
        }
        if progressed {
            blocked.iter_mut().for_each(|b| *b = false);
        } else {
            blocked[enter] = true;
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    #[serde(rename = "KKT")]
    Kkt,
    ESCandidate,
    FJCandidate,
    Unclassified,
}

impl std::fmt::Display for LabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelKind::Kkt => "KKT",
            LabelKind::ESCandidate => "ESCandidate",
            LabelKind::FJCandidate => "FJCandidate",
            LabelKind::Unclassified => "Unclassified",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub phi: f64,
    pub theta: f64,
    pub d_norm: f64,
    pub kkt_residual: f64,
    pub multiplier_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityLabel {
    pub kind: LabelKind,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub tol_theta: f64,
    pub tol_d: f64,
    pub multiplier_blowup: f64,
    pub kkt: KktOptions,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::from_params(&AlgoParams::default())
    }
}

impl Tolerances {
    pub fn from_params(p: &AlgoParams) -> Self {
        Self {
            tol_feas: p.tol_feas,
            tol_kkt: p.tol_kkt,
            tol_theta: p.tol_theta,
            tol_d: p.tol_d,
            multiplier_blowup: p.multiplier_blowup,
            kkt: KktOptions::default(),
        }
    }
}

/// The decision tree on already computed evidence.
pub fn classify_evidence(e: &Evidence, tol: &Tolerances) -> LabelKind {
    let feasible = e.phi <= tol.tol_feas;
    if feasible && e.kkt_residual <= tol.tol_kkt {
        LabelKind::Kkt
    } else if !feasible && e.theta <= tol.tol_theta {
        LabelKind::ESCandidate
    } else if feasible
        && e.d_norm <= tol.tol_d
        && e.kkt_residual > tol.tol_kkt
        && e.multiplier_norm >= tol.multiplier_blowup
    {
        LabelKind::FJCandidate
    } else {
        LabelKind::Unclassified
    }
}

/// Gathers evidence at `x` from the relaxation and direction computed there
/// and labels the point. The KKT residual uses the direction's multipliers,
/// with activity thresholds widened by ‖d‖∞.
pub fn classify_point(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    relaxation: &RelaxationReport,
    direction: &DirectionResult,
    tol: &Tolerances,
) -> StationarityLabel {
    let d_norm = direction.d_norm();
    let kkt = kkt_residual_with(problem, x, &direction.xi, &direction.pi, tol.kkt.widened(d_norm));
    let evidence = Evidence {
        phi: relaxation.phi,
        theta: relaxation.theta,
        d_norm,
        kkt_residual: kkt.combined(),
        multiplier_norm: direction.multiplier_norm(),
    };
    StationarityLabel {
        kind: classify_evidence(&evidence, tol),
        evidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::get_instance;
    use crate::problem::{PolyhedralSet, Quadratic};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn t1_residuals() {
        let t1 = get_instance("T1").unwrap().spec;
        let r = kkt_residual(&t1, &v(&[1.0]), &v(&[2.0]), &v(&[]));
        assert_eq!(r.stationarity_residual, 0.0);
        assert_eq!(r.complementarity_residual, 0.0);
        assert_eq!(r.primal_infeasibility, 0.0);
        let r = kkt_residual(&t1, &v(&[1.0]), &v(&[0.0]), &v(&[]));
        assert_eq!(r.stationarity_residual, 2.0);
    }

    #[test]
    fn unconstrained_stationary_point() {
        let p = crate::problem::ProblemSpec::builder(2)
            .objective(Quadratic::new(DMatrix::identity(2, 2), v(&[-1.0, 2.0]), 0.0).unwrap())
            .set(PolyhedralSet::boxed(v(&[-5.0, -5.0]), v(&[5.0, 5.0])).unwrap())
            .build()
            .unwrap();
        let r = kkt_residual(&p, &v(&[1.0, -2.0]), &v(&[]), &v(&[]));
        assert_eq!(r.stationarity_residual, 0.0);
    }

    #[test]
    fn library_kkt_points_have_zero_residual() {
        for id in crate::library::CATALOG {
            let inst = get_instance(id).unwrap();
            for p in &inst.known_facts.kkt_points {
                let r = kkt_residual(&inst.spec, &v(&p.x), &v(&p.xi), &v(&p.pi));
                assert!(r.combined() <= 1e-12, "{id} {:?}: {r:?}", p.x);
            }
        }
    }

    #[test]
    fn normal_cone_and_l1_box_are_used() {
        // T4 at (0, 1) with π = 0: the bound normals alone absorb ∇f = (0, −2)
        let t4 = get_instance("T4").unwrap().spec;
        let r = kkt_residual(&t4, &v(&[0.0, 1.0]), &v(&[]), &v(&[0.0]));
        assert!(r.stationarity_residual < 1e-14);
        // wrong-signed cone: at (0, 1) with π = 5, the residual is the part
        // of (5, 3) not absorbed by −e₁ and +e₂ directions: (0, 3) → 3
        let r = kkt_residual(&t4, &v(&[0.0, 1.0]), &v(&[]), &v(&[5.0]));
        assert!((r.stationarity_residual - 3.0).abs() < 1e-12);

        // T2 at (0, 0): ∇f = (0, 1) sits on the edge of the ℓ1 box
        let t2 = get_instance("T2").unwrap().spec;
        let r = kkt_residual(&t2, &v(&[0.0, 0.0]), &v(&[0.0]), &v(&[]));
        assert!(r.stationarity_residual < 1e-14);
        // at (0.5, 0): (−1 + 1, 1 + [−1, 1]) → 0 as well, but g is inactive
        let r = kkt_residual(&t2, &v(&[0.5, 0.0]), &v(&[0.0]), &v(&[]));
        assert!(r.stationarity_residual < 1e-14);
        // at (0.3, 0.2): (−0.6 + 1, 1 + 1) = (0.4, 2)
        let r = kkt_residual(&t2, &v(&[0.3, 0.2]), &v(&[0.0]), &v(&[]));
        assert!((r.stationarity_residual - (0.16f64 + 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bvls_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let lo = [-0.5, 0.0, 0.0];
            let hi = [0.5, f64::INFINITY, f64::INFINITY];
            let y = bvls(&m, &b, &lo, &hi);
            let got = (&m * &y - &b).norm();
            let mut best = f64::INFINITY;
            let steps = 40;
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let c = [
                            -0.5 + i as f64 / steps as f64,
                            j as f64 * 5.0 / steps as f64,
                            k as f64 * 5.0 / steps as f64,
                        ];
                        let r0 = m[(0, 0)] * c[0] + m[(0, 1)] * c[1] + m[(0, 2)] * c[2] - b[0];
                        let r1 = m[(1, 0)] * c[0] + m[(1, 1)] * c[1] + m[(1, 2)] * c[2] - b[1];
                        best = best.min((r0 * r0 + r1 * r1).sqrt());
                    }
                }
            }
            assert!(got <= best + 1e-12, "bvls {got} grid {best}");
            assert!(lo.iter().zip(y.iter()).all(|(l, y)| y >= l));
        }
    }

    #[test]
    fn decision_tree() {
        let tol = Tolerances::default();
        let e = |phi, theta, d_norm, kkt, mult| Evidence {
            phi,
            theta,
            d_norm,
            kkt_residual: kkt,
            multiplier_norm: mult,
        };
        assert_eq!(classify_evidence(&e(0.0, 0.0, 0.0, 1e-10, 1.0), &tol), LabelKind::Kkt);
        assert_eq!(classify_evidence(&e(0.5, 1e-12, 0.0, 1.0, 1.0), &tol), LabelKind::ESCandidate);
        assert_eq!(classify_evidence(&e(1e-14, 0.0, 1e-9, 0.3, 1e7), &tol), LabelKind::FJCandidate);
        assert_eq!(classify_evidence(&e(0.5, 0.1, 1.0, 1.0, 1.0), &tol), LabelKind::Unclassified);
        assert_eq!(classify_evidence(&e(1e-14, 0.0, 1e-9, 0.3, 10.0), &tol), LabelKind::Unclassified);
    }
}
