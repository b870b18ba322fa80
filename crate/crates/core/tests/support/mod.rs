//! Shared test oracles.
#![allow(dead_code)]

use ghost_dsm::qp::{ConicQp, QpBuilder};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Brute-force solution of a small convex QP/LP by enumerating active sets.
///
/// Every subset S of inequality rows with |S| + #eq ≤ n is tried: the
/// equality-constrained KKT system is solved, and the point is kept when it is
/// primal feasible with nonnegative multipliers on S. For convex problems any
/// such point is optimal; the minimum over candidates is returned anyway.
pub fn enumerate_qp(qp: &ConicQp) -> Option<(f64, DVector<f64>)> {
    let n = qp.num_vars();
    let k = qp.ineq_rhs.len();
    let l = qp.eq_rhs.len();
    if l > n {
        return None;
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let rows: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if rows.len() + l > n {
            continue;
        }
        let m = n + l + rows.len();
        let mut kkt = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        for i in 0..n {
            rhs[i] = -qp.linear[i];
        }
        for (r, row) in (0..l).map(|j| qp.eq_matrix.row(j)).chain(rows.iter().map(|&i| qp.ineq_matrix.row(i))).enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
        }
        for j in 0..l {
            rhs[n + j] = qp.eq_rhs[j];
        }
        for (r, &i) in rows.iter().enumerate() {
            rhs[n + l + r] = qp.ineq_rhs[i];
        }
        let svd = kkt.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
            continue;
        }
        let Ok(sol) = svd.solve(&rhs, 0.0) else { continue };
        let z = sol.rows(0, n).into_owned();
        if rows.iter().enumerate().any(|(r, _)| sol[n + l + r] < -1e-9) {
            continue;
        }
        if (&qp.ineq_matrix * &z - &qp.ineq_rhs).iter().any(|&v| v > 1e-9) {
            continue;
        }
        let val = qp.objective(&z);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, z));
        }
    }
    best
}

/// Random bounded, feasible 2-variable QP or LP.
pub fn random_small_qp<R: Rng>(rng: &mut R) -> ConicQp {
    let n = 2;
    let mut b = QpBuilder::new(n);
    if rng.gen_bool(0.5) {
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        *b.hessian_mut() = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    }
    *b.linear_mut() = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let bound = rng.gen_range(1.0..3.0);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        b.ineq(&e, bound);
        e[i] = -1.0;
        b.ineq(&e, bound);
    }
    let z0: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8 * bound..0.8 * bound)).collect();
    for _ in 0..rng.gen_range(0..=3) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at: f64 = a.iter().zip(&z0).map(|(x, y)| x * y).sum();
        b.ineq(&a, at + rng.gen_range(0.0..1.0));
    }
    if rng.gen_bool(0.3) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at: f64 = a.iter().zip(&z0).map(|(x, y)| x * y).sum();
        b.eq(&a, at);
    }
    b.build()
}
