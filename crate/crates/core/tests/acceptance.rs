//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod support;

use std::time::{Duration, Instant};

use ghost_dsm::diagnostics::{classify_evidence, LabelKind, Tolerances};
use ghost_dsm::driver::{run, Algorithm, RunOptions, RunResult, StopReason};
use ghost_dsm::format::CsvTraceWriter;
use ghost_dsm::library::get_instance;
use ghost_dsm::problem::ProblemSpec;
use ghost_dsm::qp::solve_qp;
use ghost_dsm::subproblems::{
    compute_kappa, solve_direction_convex, solve_direction_general, theta_upper_bound, AlgoParams,
};
use ghost_dsm::surrogate::{check_assumption_a, default_model, AssumptionItem, CallbackModel};
use ghost_dsm::DsmError;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// Sample instances for the κ/θ suites: T1–T4 plus RAND-QP with up to 10 variables.
fn sample_points() -> Vec<(String, ProblemSpec, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut out = Vec::with_capacity(1000);
    for id in ["T1", "T2", "T3", "T4"] {
        let spec = get_instance(id).unwrap().spec;
        for _ in 0..200 {
            out.push((id.to_string(), spec.clone(), spec.set().sample(&mut rng).unwrap()));
        }
    }
    for seed in 0..20 {
        let n = 1 + seed % 10;
        let m = 1 + seed % 4;
        let id = format!("RAND-QP({seed},{n},{m})");
        let spec = get_instance(&id).unwrap().spec;
        for _ in 0..10 {
            out.push((id.clone(), spec.clone(), spec.set().sample(&mut rng).unwrap()));
        }
    }
    out
}

fn criterion_1(points: &[(String, ProblemSpec, DVector<f64>)]) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (id, spec, x) in points {
        let model = default_model(spec);
        let params = AlgoParams::for_problem(spec);
        let r = match compute_kappa(spec, &model, x, &params) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{id}: {e}"));
                continue;
            }
        };
        let lam = params.lambda;
        let lower = r.inner_min - r.kappa;
        let upper = r.kappa - r.phi;
        let theta_eq = (r.theta - lam * (r.phi - r.inner_min)).abs();
        let neg = -r.theta;
        // the reported minimizer must attain inner_min inside the trust region and K
        let lin_g = spec.g(x) + spec.g_jac(x) * &r.d_tilde;
        let lin_h = spec.h(x) + spec.eq_a() * &r.d_tilde;
        let attained = lin_g.iter().fold(0.0f64, |a, &g| a.max(g)).max(lin_h.amax());
        let attain_gap = (attained - r.inner_min).abs();
        let trust = r.d_tilde.amax() - params.rho;
        let outside = spec.set().max_violation(&(x + &r.d_tilde));
        let bad = [lower, upper, theta_eq, neg, attain_gap, trust, outside]
            .into_iter()
            .fold(0.0f64, f64::max);
        worst = worst.max(bad);
        if !(bad <= 1e-8) {
            failures.push(format!("{id} at {:?}: violation {bad:e}", x.as_slice()));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} points, worst violation {worst:e}, {:.2?} (limit 30 s){}",
            points.len(),
            elapsed,
            first(&failures)
        ),
    )
}

fn criterion_2(points: &[(String, ProblemSpec, DVector<f64>)]) -> Outcome {
    let mut worst_slack = f64::INFINITY;
    let mut failures = Vec::new();
    for (id, spec, x) in points {
        let model = default_model(spec);
        let params = AlgoParams::for_problem(spec);
        let result = compute_kappa(spec, &model, x, &params)
            .and_then(|r| solve_direction_general(spec, &model, x, r.kappa, &params).map(|d| (r, d)));
        match result {
            Ok((r, d)) => {
                let slack = theta_upper_bound(spec, x, &d.d) + 1e-8 - r.theta;
                worst_slack = worst_slack.min(slack);
                if !(slack >= 0.0) {
                    failures.push(format!("{id} at {:?}: θ exceeds bound by {:e}", x.as_slice(), -slack));
                }
            }
            Err(e) => failures.push(format!("{id} at {:?}: {e}", x.as_slice())),
        }
    }
    outcome(
        failures.is_empty(),
        format!("{} points, smallest slack {worst_slack:e}{}", points.len(), first(&failures)),
    )
}

fn criterion_3() -> Outcome {
    let t1 = get_instance("T1").unwrap().spec;
    let model = default_model(&t1);
    let params = AlgoParams {
        lambda: 0.5,
        rho: 0.5,
        ..AlgoParams::for_problem(&t1)
    };
    let check = || -> ghost_dsm::Result<Vec<(&'static str, f64, f64)>> {
        let r = compute_kappa(&t1, &model, &v(&[0.0]), &params)?;
        let k2 = compute_kappa(&t1, &model, &v(&[2.0]), &params)?;
        let d2 = solve_direction_general(&t1, &model, &v(&[2.0]), k2.kappa, &params)?;
        let k1 = compute_kappa(&t1, &model, &v(&[1.0]), &params)?;
        let d1 = solve_direction_general(&t1, &model, &v(&[1.0]), k1.kappa, &params)?;
        Ok(vec![
            ("κ(0)", r.kappa, 0.75),
            ("θ(0)", r.theta, 0.25),
            ("d(2)", d2.d[0], -1.0),
            ("ξ(2)", d2.xi[0], 3.0),
            ("d(1)", d1.d[0], 0.0),
        ])
    };
    match check() {
        Ok(vals) => {
            let worst = vals.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
            let text: Vec<String> = vals.iter().map(|(n, got, _)| format!("{n}={got:.9}")).collect();
            outcome(worst <= 1e-7, format!("{}, worst error {worst:e}", text.join(" ")))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_obj = 0.0f64;
    let mut worst_comp = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..500 {
        let qp = support::random_small_qp(&mut rng);
        let Some((want, _)) = support::enumerate_qp(&qp) else {
            failures.push(format!("case {case}: oracle found no solution"));
            continue;
        };
        match solve_qp(&qp, 1e-10, 200) {
            Ok(sol) if sol.is_optimal() => {
                let err = (qp.objective(&sol.z) - want).abs();
                let slack = &qp.ineq_rhs - &qp.ineq_matrix * &sol.z;
                let comp = slack.component_mul(&sol.lam_ineq).amax();
                worst_obj = worst_obj.max(err);
                worst_comp = worst_comp.max(comp);
                if !(err <= 1e-8 && comp <= 1e-8) {
                    failures.push(format!("case {case}: objective error {err:e}, complementarity {comp:e}"));
                }
            }
            Ok(sol) => failures.push(format!("case {case}: status {:?}", sol.status)),
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "500 cases, worst objective error {worst_obj:e}, worst complementarity {worst_comp:e}{}",
            first(&failures)
        ),
    )
}

/// Distance from a feasible T2 point to its KKT set.
fn t2_kkt_distance(x: &DVector<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for c in [0.0, 0.5, -0.5] {
        let bottom = -(1.0f64 - c * c).sqrt();
        let y = x[1].clamp(bottom, 0.0);
        best = best.min(((x[0] - c).powi(2) + (x[1] - y).powi(2)).sqrt());
    }
    for c in [1.0, -1.0] {
        best = best.min(((x[0] - c).powi(2) + x[1].powi(2)).sqrt());
    }
    best
}

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_kkt = 0.0f64;
    for id in ["T1", "T2", "T4"] {
        let inst = get_instance(id).unwrap();
        let spec = &inst.spec;
        let model = default_model(spec);
        let params = AlgoParams::for_problem(spec);
        for p in &inst.known_facts.kkt_points {
            let x = DVector::from_column_slice(&p.x);
            match solve_direction_convex(spec, &model, &x, &params) {
                Ok(d) => {
                    worst_kkt = worst_kkt.max(d.d.norm());
                    if !(d.d.norm() <= 1e-7) {
                        failures.push(format!("{id} KKT point {:?}: ‖d‖ = {:e}", p.x, d.d.norm()));
                    }
                }
                Err(e) => failures.push(format!("{id} KKT point {:?}: {e}", p.x)),
            }
        }
    }

    // non-KKT feasible points, kept at least 0.05 away from every KKT set
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples: Vec<(&str, DVector<f64>)> = Vec::new();
    while samples.len() < 100 {
        match samples.len() % 3 {
            0 => samples.push(("T1", v(&[rng.gen_range(1.05..=2.0)]))),
            1 => {
                let x = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                if x.norm_squared() <= 1.0 && t2_kkt_distance(&x) >= 0.05 {
                    samples.push(("T2", x));
                }
            }
            _ => {
                let t: f64 = rng.gen_range(0.0..=1.0);
                if [0.0, 0.5, 1.0].iter().all(|k| (t - k).abs() >= 0.05) {
                    samples.push(("T4", v(&[t, 1.0 - t])));
                }
            }
        }
    }
    let mut smallest = f64::INFINITY;
    for (id, x) in &samples {
        let spec = get_instance(id).unwrap().spec;
        let model = default_model(&spec);
        let params = AlgoParams::for_problem(&spec);
        match solve_direction_convex(&spec, &model, x, &params) {
            Ok(d) => {
                smallest = smallest.min(d.d.norm());
                if !(d.d.norm() >= 1e-4) {
                    failures.push(format!("{id} non-KKT point {:?}: ‖d‖ = {:e}", x.as_slice(), d.d.norm()));
                }
            }
            Err(e) => failures.push(format!("{id} non-KKT point {:?}: {e}", x.as_slice())),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "largest ‖d‖ at KKT points {worst_kkt:e}, smallest ‖d‖ at {} non-KKT points {smallest:e}{}",
            samples.len(),
            first(&failures)
        ),
    )
}

struct ConvexRuns {
    runs: Vec<(String, ProblemSpec, AlgoParams, ghost_dsm::Result<RunResult>)>,
    elapsed: Duration,
}

fn convex_runs() -> ConvexRuns {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut runs = Vec::new();
    for id in ["T1", "T2", "T4"] {
        let spec = get_instance(id).unwrap().spec;
        let model = default_model(&spec);
        let params = AlgoParams {
            max_iter: 10000,
            ..AlgoParams::for_problem(&spec)
        };
        for _ in 0..20 {
            let x0 = spec.set().sample(&mut rng).unwrap();
            let res = run(&spec, &model, &params, &x0, Algorithm::Convex, RunOptions::default(), None);
            runs.push((id.to_string(), spec.clone(), params.clone(), res));
        }
    }
    ConvexRuns {
        runs,
        elapsed: start.elapsed(),
    }
}

fn criterion_6(all: &ConvexRuns) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_phi = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut max_iters = 0;
    for (id, spec, _, res) in &all.runs {
        match res {
            Ok(r) => {
                let phi = spec.phi(&r.final_x);
                let kkt = r.last_record().map_or(f64::INFINITY, |l| l.kkt_residual);
                worst_phi = worst_phi.max(phi);
                worst_kkt = worst_kkt.max(kkt);
                max_iters = max_iters.max(r.iterations);
                if !(r.stop_reason == StopReason::Converged && r.iterations <= 10000 && phi <= 1e-6 && kkt <= 1e-4) {
                    failures.push(format!(
                        "{id} from {:?}: {} after {} iterations, φ = {phi:e}, KKT residual = {kkt:e}",
                        r.x0.as_slice(),
                        r.stop_reason,
                        r.iterations
                    ));
                }
            }
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    let pass = failures.is_empty() && all.elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{} runs, max iterations {max_iters}, worst φ {worst_phi:e}, worst KKT residual {worst_kkt:e}, {:.2?} (limit 60 s){}",
            all.runs.len(),
            all.elapsed,
            first(&failures)
        ),
    )
}

fn criterion_7(all: &ConvexRuns) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_eq = 0.0f64;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut infeasible_runs = 0;
    for (id, spec, params, res) in &all.runs {
        let Ok(r) = res else { continue };
        if id == "T4" {
            for rec in &r.trace {
                let eq = spec.h(&rec.x).amax();
                worst_eq = worst_eq.max(eq);
                if !(eq <= 1e-9) {
                    failures.push(format!("T4 ν = {}: ‖Ax + b‖∞ = {eq:e}", rec.nu));
                }
            }
        }
        if spec.phi(&r.x0) > params.tol_feas {
            infeasible_runs += 1;
            for w in r.trace.windows(2) {
                let (cur, next) = (&w[0], &w[1]);
                let excess = spec.phi(&next.x) - (1.0 - cur.gamma) * spec.phi(&cur.x);
                worst_excess = worst_excess.max(excess);
                if !(excess <= 1e-10) {
                    failures.push(format!(
                        "{id} from {:?}, ν = {}: φ(x^ν+1) exceeds (1 − γ^ν)φ(x^ν) by {excess:e}",
                        r.x0.as_slice(),
                        cur.nu
                    ));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "worst T4 equality residual {worst_eq:e}; {infeasible_runs} infeasible-start runs, worst contraction excess {worst_excess:e}; {} violations{}",
            failures.len(),
            first(&failures)
        ),
    )
}

fn criterion_8() -> Outcome {
    let t3 = get_instance("T3").unwrap().spec;
    let model = default_model(&t3);
    let params = AlgoParams::for_problem(&t3);
    let r = match run(&t3, &model, &params, &v(&[0.0, 0.0]), Algorithm::General, RunOptions::default(), None) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let min_theta = r.trace.iter().map(|t| t.theta).fold(f64::INFINITY, f64::min);
    let outside = r
        .trace
        .iter()
        .map(|t| t3.set().max_violation(&t.x))
        .chain([t3.set().max_violation(&r.final_x)])
        .fold(0.0f64, f64::max);
    let label = &r.classification;
    let recheck = classify_evidence(&label.evidence, &Tolerances::from_params(&params));
    let pass = min_theta < 1e-6
        && outside <= 0.0
        && matches!(label.kind, LabelKind::Kkt | LabelKind::ESCandidate | LabelKind::FJCandidate)
        && recheck == label.kind;
    outcome(
        pass,
        format!(
            "{} after {} iterations, min θ {min_theta:e}, max distance outside K {outside:e}, label {} (re-derived {recheck}), final x {:?}",
            r.stop_reason,
            r.iterations,
            label.kind,
            r.final_x.as_slice()
        ),
    )
}

fn csv_trace(id: &str, algorithm: Algorithm, x0: &[f64]) -> ghost_dsm::Result<Vec<u8>> {
    let spec = get_instance(id)?.spec;
    let model = default_model(&spec);
    let params = AlgoParams {
        max_iter: 300,
        ..AlgoParams::for_problem(&spec)
    };
    let mut sink = CsvTraceWriter::new(Vec::new(), &params.ghost_eps_grid)?;
    run(&spec, &model, &params, &v(x0), algorithm, RunOptions::default(), Some(&mut sink))?;
    Ok(sink.into_inner())
}

fn criterion_9() -> Outcome {
    let configs: [(&str, Algorithm, &[f64]); 4] = [
        ("T1", Algorithm::Convex, &[0.0]),
        ("T2", Algorithm::Convex, &[1.5, -1.2]),
        ("T3", Algorithm::General, &[0.0, 0.0]),
        ("RAND-QP(7,5,3)", Algorithm::General, &[0.9, -0.9, 0.5, 0.0, -0.3]),
    ];
    let mut failures = Vec::new();
    let mut bytes = 0;
    for (id, alg, x0) in configs {
        match (csv_trace(id, alg, x0), csv_trace(id, alg, x0)) {
            (Ok(a), Ok(b)) => {
                bytes += a.len();
                if a != b {
                    failures.push(format!("{id}: traces differ"));
                }
            }
            (Err(e), _) | (_, Err(e)) => failures.push(format!("{id}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!("4 configurations, {bytes} trace bytes compared{}", first(&failures)),
    )
}

fn criterion_10() -> Outcome {
    let t1 = get_instance("T1").unwrap().spec;
    // ∇₁f̃(0; x) = ∇f(x) + 1
    let bad = CallbackModel::new(
        1.0,
        |p, d, x| p.f(x) + (p.grad_f(x).add_scalar(1.0)).dot(d) + 0.5 * d.norm_squared(),
        |p, d, x| p.grad_f(x).add_scalar(1.0) + d,
        |p, d, x| p.g(x) + p.g_jac(x) * d,
        |p, _, x| p.g_jac(x),
    );
    match check_assumption_a(&t1, &bad, 20, 10) {
        Err(DsmError::AssumptionA(f)) => {
            let items = f.failed_items();
            let message = DsmError::AssumptionA(f).to_string();
            let pass = items == vec![AssumptionItem::A4] && message.contains("A4");
            outcome(pass, format!("rejected, items {items:?}: {}", message.lines().nth(1).unwrap_or("").trim()))
        }
        Err(e) => outcome(false, format!("wrong error: {e}")),
        Ok(_) => outcome(false, "inconsistent surrogate accepted"),
    }
}

fn first(failures: &[String]) -> String {
    match failures.first() {
        Some(f) if failures.len() > 1 => format!("; first failure: {f} (+{} more)", failures.len() - 1),
        Some(f) => format!("; failure: {f}"),
        None => String::new(),
    }
}

fn main() {
    let total = Instant::now();
    let points = sample_points();
    let convex = convex_runs();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("1 κ bounds", Box::new(|| criterion_1(&points))),
        ("2 θ bound", Box::new(|| criterion_2(&points))),
        ("3 hand-computed subproblems", Box::new(criterion_3)),
        ("4 inner-solver oracle", Box::new(criterion_4)),
        ("5 stationarity equivalence", Box::new(criterion_5)),
        ("6 convex method end-to-end", Box::new(|| criterion_6(&convex))),
        ("7 convex method invariants", Box::new(|| criterion_7(&convex))),
        ("8 general method on T3", Box::new(criterion_8)),
        ("9 determinism", Box::new(criterion_9)),
        ("10 surrogate consistency harness", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {failed} of 10 criteria failed, {:.2?} total", total.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
