//! Small test instances with facts that can be checked by hand.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::problem::{PolyhedralSet, ProblemSpec, Quadratic};

/// A KKT point together with one valid multiplier pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownKktPoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownFacts {
    pub kkt_points: Vec<KnownKktPoint>,
    pub optimal_value: Option<f64>,
    pub feasibility_notes: String,
    pub assumption_d_holds: bool,
}

#[derive(Debug, Clone)]
pub struct LibraryInstance {
    pub id: String,
    pub spec: ProblemSpec,
    pub known_facts: KnownFacts,
}

/// Fixed catalog entries; `RAND-QP(seed,n,m)` is also accepted by [`get_instance`].
pub const CATALOG: [&str; 4] = ["T1", "T2", "T3", "T4"];

pub fn get_instance(id: &str) -> Result<LibraryInstance> {
    let trimmed = id.trim();
    match trimmed {
        "T1" => t1(),
        "T2" => t2(),
        "T3" => t3(),
        "T4" => t4(),
        _ => match parse_rand_qp(trimmed) {
            Some((seed, n, m)) => rand_qp(seed, n, m),
            None => Err(DsmError::UnknownInstance(id.to_string())),
        },
    }
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn square_box(n: usize, lo: f64, hi: f64) -> Result<PolyhedralSet> {
    PolyhedralSet::boxed(DVector::from_element(n, lo), DVector::from_element(n, hi))
}

fn kkt(x: &[f64], xi: &[f64], pi: &[f64]) -> KnownKktPoint {
    KnownKktPoint {
        x: x.to_vec(),
        xi: xi.to_vec(),
        pi: pi.to_vec(),
    }
}

/// min x² s.t. 1 − x ≤ 0, x ∈ [−2, 2].
fn t1() -> Result<LibraryInstance> {
    let spec = ProblemSpec::builder(1)
        .objective(Quadratic::new(DMatrix::from_element(1, 1, 2.0), v(&[0.0]), 0.0)?)
        .constraint(Quadratic::affine(v(&[-1.0]), 1.0))
        .set(square_box(1, -2.0, 2.0)?)
        .convex_constraints(true)
        .build()?;
    Ok(LibraryInstance {
        id: "T1".into(),
        spec,
        known_facts: KnownFacts {
            kkt_points: vec![kkt(&[1.0], &[2.0], &[])],
            optimal_value: Some(1.0),
            feasibility_notes: "feasible set [1, 2]; constraint active at the solution".into(),
            assumption_d_holds: true,
        },
    })
}

/// min −x₁² + x₂ + |x₁| + |x₂| s.t. x₁² + x₂² − 1 ≤ 0, x ∈ [−2, 2]².
fn t2() -> Result<LibraryInstance> {
    let spec = ProblemSpec::builder(2)
        .objective(Quadratic::new(
            DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 1.0]),
            0.0,
        )?)
        .l1(v(&[1.0, 1.0]))
        .constraint(Quadratic::new(DMatrix::identity(2, 2) * 2.0, v(&[0.0, 0.0]), -1.0)?)
        .set(square_box(2, -2.0, 2.0)?)
        .convex_constraints(true)
        .build()?;
    Ok(LibraryInstance {
        id: "T2".into(),
        spec,
        known_facts: KnownFacts {
            kkt_points: vec![
                kkt(&[0.0, 0.0], &[0.0], &[]),
                kkt(&[0.0, -0.5], &[0.0], &[]),
                kkt(&[0.0, -1.0], &[0.0], &[]),
                kkt(&[0.5, 0.0], &[0.0], &[]),
                kkt(&[-0.5, -0.5], &[0.0], &[]),
                kkt(&[1.0, 0.0], &[0.5], &[]),
                kkt(&[-1.0, 0.0], &[0.5], &[]),
            ],
            optimal_value: Some(0.0),
            feasibility_notes: "unit disk; KKT set is the three segments {x₁ ∈ {0, ±½}, −√(1 − x₁²) ≤ x₂ ≤ 0} \
                                plus (±1, 0); global minimizers {0}×[−1, 0] and (±1, 0)"
                .into(),
            assumption_d_holds: true,
        },
    })
}

/// min (x₁−1)² + (x₂−2)² s.t. 1 − x₁² − x₂² ≤ 0, x₁ + x₂ − 2 = 0, x ∈ [−2, 2]².
fn t3() -> Result<LibraryInstance> {
    let spec = ProblemSpec::builder(2)
        .objective(Quadratic::new(DMatrix::identity(2, 2) * 2.0, v(&[-2.0, -4.0]), 5.0)?)
        .constraint(Quadratic::new(DMatrix::identity(2, 2) * -2.0, v(&[0.0, 0.0]), 1.0)?)
        .equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[-2.0]))
        .set(square_box(2, -2.0, 2.0)?)
        .build()?;
    Ok(LibraryInstance {
        id: "T3".into(),
        spec,
        known_facts: KnownFacts {
            kkt_points: vec![kkt(&[0.5, 1.5], &[0.0], &[1.0])],
            optimal_value: Some(0.5),
            feasibility_notes: "line x₁ + x₂ = 2 outside the open unit disk; g is concave".into(),
            assumption_d_holds: false,
        },
    })
}

/// min −‖x‖² s.t. x₁ + x₂ − 1 = 0, x ∈ [0, 1]².
fn t4() -> Result<LibraryInstance> {
    let spec = ProblemSpec::builder(2)
        .objective(Quadratic::new(DMatrix::identity(2, 2) * -2.0, v(&[0.0, 0.0]), 0.0)?)
        .equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[-1.0]))
        .set(square_box(2, 0.0, 1.0)?)
        .convex_constraints(true)
        .build()?;
    Ok(LibraryInstance {
        id: "T4".into(),
        spec,
        known_facts: KnownFacts {
            kkt_points: vec![
                kkt(&[0.0, 1.0], &[], &[2.0]),
                kkt(&[1.0, 0.0], &[], &[2.0]),
                kkt(&[0.5, 0.5], &[], &[1.0]),
            ],
            optimal_value: Some(-1.0),
            feasibility_notes: "segment between (0, 1) and (1, 0); the midpoint is a KKT maximizer".into(),
            assumption_d_holds: true,
        },
    })
}

fn parse_rand_qp(id: &str) -> Option<(u64, usize, usize)> {
    let inner = id.strip_prefix("RAND-QP(")?.strip_suffix(')')?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return None;
    }
    Some((parts[0].parse().ok()?, parts[1].parse().ok()?, parts[2].parse().ok()?))
}

/// Random indefinite quadratic objective, m convex ellipsoidal constraints
/// sharing a strictly feasible point, K = [−1, 1]ⁿ.
fn rand_qp(seed: u64, n: usize, m: usize) -> Result<LibraryInstance> {
    if n == 0 || n > 50 || m > 50 {
        return Err(DsmError::UnknownInstance(format!(
            "RAND-QP({seed},{n},{m}): need 1 ≤ n ≤ 50 and m ≤ 50"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);

    let raw = DMatrix::from_fn(n, n, |_, _| u(-1.0, 1.0));
    let hess = (&raw + raw.transpose()) * 0.5;
    let lin = DVector::from_fn(n, |_, _| u(-1.0, 1.0));
    let mut builder = ProblemSpec::builder(n)
        .objective(Quadratic::new(hess, lin, 0.0)?)
        .set(square_box(n, -1.0, 1.0)?)
        .convex_constraints(true);

    let z0 = DVector::from_fn(n, |_, _| u(-0.5, 0.5));
    for _ in 0..m {
        let l = DMatrix::from_fn(n, n, |_, _| u(-1.0, 1.0));
        let p = (&l * l.transpose()) / n as f64 + DMatrix::identity(n, n) * 0.1;
        let a = DVector::from_fn(n, |_, _| u(-1.0, 1.0));
        let s = (&z0 - &a).dot(&(&p * (&z0 - &a))) + u(0.1, 0.5);
        // (x − a)ᵀP(x − a) − s
        let g = Quadratic::new(&p * 2.0, &p * &a * -2.0, a.dot(&(&p * &a)) - s)?;
        builder = builder.constraint(g);
    }
    Ok(LibraryInstance {
        id: format!("RAND-QP({seed},{n},{m})"),
        spec: builder.build()?,
        known_facts: KnownFacts {
            kkt_points: Vec::new(),
            optimal_value: None,
            feasibility_notes: "all ellipsoids contain a common point strictly inside [−0.5, 0.5]ⁿ".into(),
            assumption_d_holds: true,
        },
    })
}
