//! File formats: JSON problem documents, CSV traces and JSON run reports.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::StationarityLabel;
use crate::driver::{Algorithm, GhostMonotonicity, IterationRecord, RunResult, StopReason, SubsolverFailureInfo, TraceSink};
use crate::error::{DsmError, Result};
use crate::problem::{FunctionDoc, PolyhedralSet, ProblemSpec};
use crate::subproblems::AlgoParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Doc {
    pub weights: Vec<f64>,
}

/// K as JSON; `null` bound entries mean ±∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDoc {
    #[serde(default)]
    pub lower: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub upper: Option<Vec<Option<f64>>>,
    #[serde(rename = "C", default, skip_serializing_if = "Vec::is_empty")]
    pub c: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDoc {
    pub n: usize,
    pub objective: FunctionDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<L1Doc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g: Vec<FunctionDoc>,
    #[serde(rename = "A", default, skip_serializing_if = "Vec::is_empty")]
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b: Vec<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<SetDoc>,
    /// Declares g convex; inferred from the function kinds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convex_constraints: Option<bool>,
}

fn bounds(v: &Option<Vec<Option<f64>>>, n: usize, missing: f64, what: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::from_element(n, missing)),
        Some(v) if v.len() == n => Ok(DVector::from_iterator(n, v.iter().map(|b| b.unwrap_or(missing)))),
        Some(v) => Err(DsmError::InvalidProblem(format!("K.{what} has {} entries, expected {n}", v.len()))),
    }
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != n) {
        return Err(DsmError::InvalidProblem(format!("every row of {what} needs {n} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ProblemDoc {
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let n = self.n;
        let mut builder = ProblemSpec::builder(n).objective_arc(self.objective.build(n)?);
        if let Some(q) = &self.q {
            if q.weights.len() != n {
                return Err(DsmError::InvalidProblem("q.weights needs n entries".into()));
            }
            builder = builder.l1(DVector::from_column_slice(&q.weights));
        }
        let mut all_convex = true;
        for g in &self.g {
            let f = g.build(n)?;
            all_convex &= f.known_convex() == Some(true);
            builder = builder.constraint_arc(f);
        }
        if !self.a.is_empty() || !self.b.is_empty() {
            if self.a.len() != self.b.len() {
                return Err(DsmError::InvalidProblem("A and b have different row counts".into()));
            }
            builder = builder.equalities(matrix(&self.a, n, "A")?, DVector::from_column_slice(&self.b));
        }
        if let Some(k) = &self.k {
            if k.c.len() != k.u.len() {
                return Err(DsmError::InvalidProblem("K.C and K.u have different row counts".into()));
            }
            let set = PolyhedralSet::new(
                bounds(&k.lower, n, f64::NEG_INFINITY, "lower")?,
                bounds(&k.upper, n, f64::INFINITY, "upper")?,
                matrix(&k.c, n, "K.C")?,
                DVector::from_column_slice(&k.u),
            )?;
            builder = builder.set(set);
        }
        builder
            .convex_constraints(self.convex_constraints.unwrap_or(all_convex))
            .build()
    }

    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let describe = |f: &dyn crate::problem::ScalarFunction, what: &str| {
            f.describe()
                .ok_or_else(|| DsmError::InvalidProblem(format!("{what} has no JSON description")))
        };
        let n = spec.n();
        let set = spec.set();
        let q = (!spec.nonsmooth().is_zero()).then(|| L1Doc {
            weights: spec.nonsmooth().weights().iter().copied().collect(),
        });
        Ok(Self {
            n,
            objective: describe(spec.objective().as_ref(), "objective")?,
            q,
            g: spec
                .constraints()
                .iter()
                .enumerate()
                .map(|(i, g)| describe(g.as_ref(), &format!("constraint {i}")))
                .collect::<Result<_>>()?,
            a: spec.eq_a().row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: spec.eq_b().iter().copied().collect(),
            k: Some(SetDoc {
                lower: Some(set.lower.iter().map(|&v| finite_or_null(v)).collect()),
                upper: Some(set.upper.iter().map(|&v| finite_or_null(v)).collect()),
                c: set.c_mat.row_iter().map(|r| r.iter().copied().collect()).collect(),
                u: set.c_rhs.iter().copied().collect(),
            }),
            convex_constraints: Some(spec.g_convex()),
        })
    }
}

pub fn load_problem(path: &std::path::Path) -> Result<ProblemSpec> {
    let text = std::fs::read_to_string(path)?;
    let doc: ProblemDoc = serde_json::from_str(&text)?;
    doc.to_spec()
}

pub fn trace_header(eps_grid: &[f64]) -> String {
    let mut h = String::from("nu,gamma,d_norm,phi,kappa,theta,kkt_residual");
    for e in eps_grid {
        h.push_str(&format!(",W_eps_{e}"));
    }
    h.push_str(",wall_time_ns");
    h
}

pub fn trace_row(rec: &IterationRecord) -> String {
    let mut row = format!(
        "{},{},{},{},{},{},{}",
        rec.nu, rec.gamma, rec.d_norm, rec.phi, rec.kappa, rec.theta, rec.kkt_residual
    );
    for (_, w) in &rec.ghost_w {
        row.push_str(&format!(",{w}"));
    }
    row.push_str(&format!(",{}", rec.wall_time_ns));
    row
}

/// Streams trace rows as CSV; the header is written on construction.
pub struct CsvTraceWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(mut out: W, eps_grid: &[f64]) -> Result<Self> {
        writeln!(out, "{}", trace_header(eps_grid))?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for CsvTraceWriter<W> {
    fn record(&mut self, rec: &IterationRecord) -> Result<()> {
        writeln!(self.out, "{}", trace_row(rec))?;
        Ok(())
    }
}

pub fn trace_to_csv(trace: &[IterationRecord], eps_grid: &[f64]) -> String {
    let mut s = trace_header(eps_grid);
    s.push('\n');
    for r in trace {
        s.push_str(&trace_row(r));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub phi: f64,
    pub theta: f64,
    pub d_norm: f64,
    pub kkt_residual: f64,
}

/// Final JSON report of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub algorithm: Algorithm,
    pub params: AlgoParams,
    pub x0: Vec<f64>,
    pub final_x: Vec<f64>,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub classification: StationarityLabel,
    pub final_state: Option<FinalState>,
    pub ghost_penalty: Vec<GhostMonotonicity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<SubsolverFailureInfo>,
}

impl RunReport {
    pub fn new(problem: &str, params: &AlgoParams, run: &RunResult) -> Self {
        Self {
            problem: problem.to_string(),
            algorithm: run.algorithm,
            params: params.clone(),
            x0: run.x0.iter().copied().collect(),
            final_x: run.final_x.iter().copied().collect(),
            stop_reason: run.stop_reason,
            iterations: run.iterations,
            classification: run.classification,
            final_state: run.last_record().map(|r| FinalState {
                phi: r.phi,
                theta: r.theta,
                d_norm: r.d_norm,
                kkt_residual: r.kkt_residual,
            }),
            ghost_penalty: run.ghost_report.clone(),
            failure: run.failure.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
