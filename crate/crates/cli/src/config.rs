//! Run configurations and their execution.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ghost_dsm::driver::{run, Algorithm, RunOptions, RunResult};
use ghost_dsm::format::{load_problem, CsvTraceWriter, RunReport};
use ghost_dsm::library::get_instance;
use ghost_dsm::problem::{project, ProblemSpec};
use ghost_dsm::subproblems::AlgoParams;
use ghost_dsm::surrogate::default_model;
use ghost_dsm::{DsmError, Result};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const CENTER: &str = "project-center-of-K";
pub const RANDOM: &str = "random";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartPoint {
    Explicit(Vec<f64>),
    /// `project-center-of-K` or `random` (uniform in K, drawn with `seed`).
    Named(String),
}

impl Default for StartPoint {
    fn default() -> Self {
        StartPoint::Named(CENTER.into())
    }
}

impl StartPoint {
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t == CENTER || t == RANDOM {
            return Ok(StartPoint::Named(t.into()));
        }
        t.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(StartPoint::Explicit)
            .map_err(|_| DsmError::Configuration(format!("cannot parse --x0 '{text}'")))
    }
}

/// One solve, as read from a batch directory or assembled from flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Library id or path to a JSON problem file.
    pub problem: String,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Overrides on top of the problem-dependent defaults.
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
    #[serde(default)]
    pub x0: StartPoint,
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub report_path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timing: bool,
}

fn default_algorithm() -> Algorithm {
    Algorithm::General
}

pub fn resolve_problem(reference: &str, base: Option<&Path>) -> Result<ProblemSpec> {
    let path = match base {
        Some(dir) if Path::new(reference).is_relative() => dir.join(reference),
        _ => PathBuf::from(reference),
    };
    if reference.ends_with(".json") || path.is_file() {
        load_problem(&path)
    } else {
        Ok(get_instance(reference)?.spec)
    }
}

/// Problem defaults overlaid with the configured overrides.
pub fn resolve_params(spec: &ProblemSpec, overrides: &serde_json::Map<String, Value>) -> Result<AlgoParams> {
    let mut merged = serde_json::to_value(AlgoParams::for_problem(spec))?;
    let obj = merged.as_object_mut().expect("params serialize to an object");
    for (k, v) in overrides {
        if !obj.contains_key(k) {
            return Err(DsmError::Configuration(format!("unknown parameter '{k}'")));
        }
        obj.insert(k.clone(), v.clone());
    }
    let params: AlgoParams = serde_json::from_value(merged)
        .map_err(|e| DsmError::Configuration(format!("bad parameter value: {e}")))?;
    params.validate()?;
    Ok(params)
}

fn start_point(spec: &ProblemSpec, x0: &StartPoint, seed: u64) -> Result<DVector<f64>> {
    match x0 {
        StartPoint::Explicit(v) => Ok(DVector::from_column_slice(v)),
        StartPoint::Named(s) if s == CENTER => project(spec.set(), &spec.set().box_center(), None),
        StartPoint::Named(s) if s == RANDOM => spec.set().sample(&mut ChaCha8Rng::seed_from_u64(seed)),
        StartPoint::Named(s) => Err(DsmError::Configuration(format!("unknown start point '{s}'"))),
    }
}

pub struct Executed {
    pub result: RunResult,
    pub report: RunReport,
}

/// Resolves, runs and persists one configuration. Relative paths are taken
/// against `base` when given.
pub fn execute(cfg: &RunConfig, base: Option<&Path>) -> Result<Executed> {
    let at = |p: &PathBuf| match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.clone(),
    };
    let spec = resolve_problem(&cfg.problem, base)?;
    let params = resolve_params(&spec, &cfg.params)?;
    let x0 = start_point(&spec, &cfg.x0, cfg.seed)?;
    let model = default_model(&spec);
    let opts = RunOptions { timing: cfg.timing };
    log::info!("running {} on {} from {:?}", format!("{:?}", cfg.algorithm).to_lowercase(), cfg.problem, x0.as_slice());

    let result = match &cfg.trace_path {
        Some(p) => {
            let file = BufWriter::new(File::create(at(p))?);
            let mut sink = CsvTraceWriter::new(file, &params.ghost_eps_grid)?;
            let r = run(&spec, &model, &params, &x0, cfg.algorithm, opts, Some(&mut sink))?;
            use std::io::Write;
            sink.into_inner().flush()?;
            r
        }
        None => run(&spec, &model, &params, &x0, cfg.algorithm, opts, None)?,
    };
    let report = RunReport::new(&cfg.problem, &params, &result);
    if let Some(p) = &cfg.report_path {
        std::fs::write(at(p), report.to_json()? + "\n")?;
    }
    Ok(Executed { result, report })
}
