//! The two diminishing-stepsize loops: the general method, which relaxes the
//! linearized constraints by κ(x), and the simplified method for convex g and
//! linear h, which linearizes them exactly.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{classify_point, kkt_residual_with, Evidence, LabelKind, StationarityLabel, Tolerances};
use crate::error::{DsmError, Result};
use crate::problem::{project, ProblemSpec};
use crate::subproblems::{
    compute_kappa, solve_direction_convex, solve_direction_general, AlgoParams, DirectionResult, RelaxationReport,
};
use crate::surrogate::SurrogateModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub gamma0: f64,
    pub exponent: f64,
}

impl StepsizeSchedule {
    pub fn new(gamma0: f64, exponent: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0 <= 1.0) {
            return Err(DsmError::InvalidParams(format!("gamma0 must lie in (0, 1], got {gamma0}")));
        }
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(DsmError::InvalidParams(format!(
                "stepsize exponent must lie in (0.5, 1], got {exponent}"
            )));
        }
        Ok(Self { gamma0, exponent })
    }

    pub fn from_params(p: &AlgoParams) -> Result<Self> {
        Self::new(p.gamma0, p.gamma_exponent)
    }

    /// γ^ν = γ₀ / (ν + 1)^p
    pub fn gamma(&self, nu: usize) -> f64 {
        self.gamma0 / ((nu + 1) as f64).powf(self.exponent)
    }

    pub fn partial_sum(&self, count: usize) -> f64 {
        (0..count).map(|nu| self.gamma(nu)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub nu: usize,
    pub x: DVector<f64>,
    pub gamma: f64,
    pub d_norm: f64,
    pub phi: f64,
    pub kappa: f64,
    pub theta: f64,
    pub kkt_residual: f64,
    /// (ε, W(x; ε)) per grid entry.
    pub ghost_w: Vec<(f64, f64)>,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIter,
    SubsolverFailure,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "Converged",
            StopReason::MaxIter => "MaxIter",
            StopReason::SubsolverFailure => "SubsolverFailure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    General,
    Convex,
}

/// Per-ε summary of the ghost penalty along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostMonotonicity {
    pub eps: f64,
    /// First index from which W(x^ν; ε) never increases again.
    pub monotone_from: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolverFailureInfo {
    pub message: String,
    pub dump: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub x0: DVector<f64>,
    pub final_x: DVector<f64>,
    pub classification: StationarityLabel,
    /// Number of steps taken.
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub ghost_report: Vec<GhostMonotonicity>,
    pub failure: Option<SubsolverFailureInfo>,
}

impl RunResult {
    pub fn last_record(&self) -> Option<&IterationRecord> {
        self.trace.last()
    }
}

/// Receives trace rows as they are produced.
pub trait TraceSink {
    fn record(&mut self, rec: &IterationRecord) -> Result<()>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Fill `wall_time_ns`; left at 0 otherwise so traces are reproducible.
    pub timing: bool,
}

/// W(x; ε) = f(x) + q(x) + φ(x)/ε for every ε of the grid.
pub fn ghost_penalty_samples(problem: &ProblemSpec, x: &DVector<f64>, eps_grid: &[f64]) -> Vec<(f64, f64)> {
    let base = problem.total_objective(x);
    let phi = problem.phi(x);
    eps_grid.iter().map(|&e| (e, base + phi / e)).collect()
}

pub fn ghost_monotonicity(trace: &[IterationRecord], eps_grid: &[f64]) -> Vec<GhostMonotonicity> {
    eps_grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let w: Vec<f64> = trace.iter().map(|r| r.ghost_w[k].1).collect();
            let mut start = w.len().saturating_sub(1);
            while start > 0 && w[start] <= w[start - 1] + 1e-12 * (1.0 + w[start - 1].abs()) {
                start -= 1;
            }
            GhostMonotonicity {
                eps,
                monotone_from: start,
            }
        })
        .collect()
}

pub fn run_algorithm1(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    params: &AlgoParams,
    x0: &DVector<f64>,
) -> Result<RunResult> {
    run(problem, model, params, x0, Algorithm::General, RunOptions::default(), None)
}

pub fn run_algorithm2(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    params: &AlgoParams,
    x0: &DVector<f64>,
) -> Result<RunResult> {
    run(problem, model, params, x0, Algorithm::Convex, RunOptions::default(), None)
}

/// Moves `x0` into K (and onto Ax + b = 0 for the convex method) when needed.
pub fn prepare_start(
    problem: &ProblemSpec,
    params: &AlgoParams,
    x0: &DVector<f64>,
    algorithm: Algorithm,
) -> Result<DVector<f64>> {
    problem.check_dims(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(DsmError::Precondition("starting point must be finite".into()));
    }
    let in_set = problem.set().contains(x0, params.tol_feas);
    match algorithm {
        Algorithm::General => {
            if in_set {
                return Ok(x0.clone());
            }
            log::warn!("starting point lies outside K; projecting");
            project(problem.set(), x0, None)
        }
        Algorithm::Convex => {
            let on_plane = problem.p() == 0 || problem.h(x0).amax() <= params.tol_feas;
            if in_set && on_plane {
                return Ok(x0.clone());
            }
            log::warn!("starting point violates K or Ax + b = 0; projecting");
            project(problem.set(), x0, Some((problem.eq_a(), problem.eq_b())))
        }
    }
}

fn check_config(problem: &ProblemSpec, model: &dyn SurrogateModel, params: &AlgoParams, algorithm: Algorithm) -> Result<()> {
    params.validate()?;
    if algorithm == Algorithm::Convex {
        if !problem.g_convex() {
            return Err(DsmError::Configuration(
                "the convex method needs a problem whose constraints are flagged convex".into(),
            ));
        }
        if !problem.set().is_bounded_box() {
            return Err(DsmError::Configuration("the convex method needs a bounded set K".into()));
        }
    }
    if model.local_qp(problem, &problem.set().box_center()).is_none() {
        return Err(DsmError::SurrogateNotQuadratic);
    }
    Ok(())
}

fn failure_info(e: &DsmError) -> Option<SubsolverFailureInfo> {
    match e {
        DsmError::Subsolver { dump, .. } => Some(SubsolverFailureInfo {
            message: e.to_string(),
            dump: dump.clone(),
        }),
        _ => None,
    }
}

struct Step {
    relaxation: RelaxationReport,
    direction: DirectionResult,
}

fn evaluate(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    params: &AlgoParams,
    x: &DVector<f64>,
    algorithm: Algorithm,
) -> Result<Step> {
    match algorithm {
        Algorithm::General => {
            let relaxation = compute_kappa(problem, model, x, params)?;
            let direction = solve_direction_general(problem, model, x, relaxation.kappa, params)?;
            Ok(Step { relaxation, direction })
        }
        Algorithm::Convex => {
            let direction = solve_direction_convex(problem, model, x, params)?;
            let phi = problem.phi(x);
            // κ ≡ 0 for this method, hence θ = φ
            let relaxation = RelaxationReport {
                phi,
                inner_min: 0.0,
                kappa: 0.0,
                theta: phi,
                d_tilde: DVector::zeros(problem.n()),
            };
            Ok(Step { relaxation, direction })
        }
    }
}

/// Runs either method from `x0`, streaming rows to `sink` when given.
pub fn run(
    problem: &ProblemSpec,
    model: &dyn SurrogateModel,
    params: &AlgoParams,
    x0: &DVector<f64>,
    algorithm: Algorithm,
    opts: RunOptions,
    mut sink: Option<&mut dyn TraceSink>,
) -> Result<RunResult> {
    check_config(problem, model, params, algorithm)?;
    let schedule = StepsizeSchedule::from_params(params)?;
    let tol = Tolerances::from_params(params);
    let start = prepare_start(problem, params, x0, algorithm)?;
    let set = problem.set();

    let mut x = start.clone();
    let mut trace = Vec::new();
    let mut last_mult = f64::INFINITY;
    for nu in 0..=params.max_iter {
        let clock = Instant::now();
        let step = match evaluate(problem, model, params, &x, algorithm) {
            Ok(s) => s,
            Err(e) => {
                let Some(failure) = failure_info(&e) else { return Err(e) };
                log::error!("{e}");
                let evidence = trace.last().map_or(
                    Evidence {
                        phi: problem.phi(&x),
                        theta: f64::INFINITY,
                        d_norm: f64::INFINITY,
                        kkt_residual: f64::INFINITY,
                        multiplier_norm: f64::INFINITY,
                    },
                    |r: &IterationRecord| Evidence {
                        phi: r.phi,
                        theta: r.theta,
                        d_norm: r.d_norm,
                        kkt_residual: r.kkt_residual,
                        multiplier_norm: last_mult,
                    },
                );
                let ghost_report = ghost_monotonicity(&trace, &params.ghost_eps_grid);
                return Ok(RunResult {
                    algorithm,
                    x0: start,
                    final_x: x,
                    classification: StationarityLabel {
                        kind: LabelKind::Unclassified,
                        evidence,
                    },
                    iterations: nu,
                    trace,
                    stop_reason: StopReason::SubsolverFailure,
                    ghost_report,
                    failure: Some(failure),
                });
            }
        };
        let d_norm = step.direction.d_norm();
        last_mult = step.direction.multiplier_norm();
        let kkt = kkt_residual_with(problem, &x, &step.direction.xi, &step.direction.pi, tol.kkt.widened(d_norm));
        let gamma = schedule.gamma(nu);
        let mut rec = IterationRecord {
            nu,
            x: x.clone(),
            gamma,
            d_norm,
            phi: step.relaxation.phi,
            kappa: step.relaxation.kappa,
            theta: step.relaxation.theta,
            kkt_residual: kkt.combined(),
            ghost_w: ghost_penalty_samples(problem, &x, &params.ghost_eps_grid),
            wall_time_ns: 0,
        };

        let converged = d_norm <= params.tol_d
            && match algorithm {
                Algorithm::General => step.relaxation.theta <= params.tol_theta,
                Algorithm::Convex => step.relaxation.phi <= params.tol_feas,
            };
        let stop = if converged {
            Some(StopReason::Converged)
        } else if nu == params.max_iter {
            Some(StopReason::MaxIter)
        } else {
            None
        };
        if stop.is_none() {
            x.axpy(gamma, &step.direction.d, 1.0);
            // round-off can push a coordinate a hair past its bound
            for i in 0..x.len() {
                x[i] = x[i].clamp(set.lower[i], set.upper[i]);
            }
        }
        if opts.timing {
            rec.wall_time_ns = u64::try_from(clock.elapsed().as_nanos()).unwrap_or(u64::MAX);
        }
        if let Some(s) = sink.as_deref_mut() {
            s.record(&rec)?;
        }
        log::debug!(
            "nu={nu} gamma={gamma:.3e} |d|={d_norm:.3e} phi={:.3e} theta={:.3e}",
            rec.phi,
            rec.theta
        );
        trace.push(rec);

        if let Some(stop_reason) = stop {
            let classification = classify_point(problem, &x, &step.relaxation, &step.direction, &tol);
            let ghost_report = ghost_monotonicity(&trace, &params.ghost_eps_grid);
            log::info!("stopped: {stop_reason} after {nu} steps, label {}", classification.kind);
            return Ok(RunResult {
                algorithm,
                x0: start,
                final_x: x,
                classification,
                iterations: nu,
                trace,
                stop_reason,
                ghost_report,
                failure: None,
            });
        }
    }
    unreachable!("the loop returns at nu = max_iter")
}
