//! `ghost-dsm`: run the diminishing-stepsize solvers from the command line.
//!
//! Exit codes: 0 converged, 2 iteration limit (or any failed batch row),
//! 3 configuration error, 4 subproblem solver failure.

mod batch;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ghost_dsm::driver::{Algorithm, StopReason};
use ghost_dsm::format::ProblemDoc;
use ghost_dsm::problem::{check_gradients, midpoint_convexity_holds};
use ghost_dsm::surrogate::{check_assumption_a, default_model};
use ghost_dsm::DsmError;
use serde_json::{json, Value};

use config::{execute, resolve_problem, RunConfig, StartPoint};

const EXIT_OK: u8 = 0;
const EXIT_MAX_ITER: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_SUBSOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "ghost-dsm", version, about = "Diminishing-stepsize solvers for nonconvex constrained problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem.
    Run(RunArgs),
    /// Check surrogate consistency and gradients of a problem.
    Check(CheckArgs),
    /// Run every *.json config in a directory and write a summary CSV.
    Batch(BatchArgs),
    /// Write a problem as JSON.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    General,
    Convex,
}

#[derive(Args)]
struct RunArgs {
    /// Library id (T1..T4, RAND-QP(seed,n,m)) or JSON problem file.
    #[arg(long)]
    problem: String,
    #[arg(long, value_enum, default_value = "general")]
    algorithm: AlgoArg,
    /// Comma-separated start point, `project-center-of-K` or `random`.
    #[arg(long, default_value = config::CENTER, allow_hyphen_values = true)]
    x0: String,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    gamma_exponent: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tol_d: Option<f64>,
    #[arg(long)]
    tol_theta: Option<f64>,
    #[arg(long)]
    tol_feas: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Comma-separated ε grid for the penalty diagnostics.
    #[arg(long, value_delimiter = ',')]
    ghost_eps: Option<Vec<f64>>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Seed for `--x0 random`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall-clock time per iteration (traces are then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BatchArgs {
    /// Directory of RunConfig JSON files.
    config_dir: PathBuf,
    /// Summary location; defaults to <config_dir>/summary.csv.
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn error_kind(e: &DsmError) -> &'static str {
    match e {
        DsmError::InvalidProblem(_) => "InvalidProblem",
        DsmError::ModelConstruction(_) => "ModelConstruction",
        DsmError::SurrogateNotQuadratic => "SurrogateNotQuadratic",
        DsmError::Precondition(_) => "Precondition",
        DsmError::InvalidParams(_) => "InvalidParams",
        DsmError::Configuration(_) => "Configuration",
        DsmError::Subsolver { .. } => "SubsolverFailure",
        DsmError::AssumptionDViolated { .. } => "AssumptionDViolated",
        DsmError::AssumptionA(_) => "AssumptionA",
        DsmError::UnknownInstance(_) => "UnknownInstance",
        DsmError::GradientCheck(_) => "GradientCheck",
        DsmError::Io(_) => "Io",
        DsmError::Json(_) => "Json",
    }
}

fn exit_code_for(e: &DsmError) -> u8 {
    match e {
        DsmError::Subsolver { .. } | DsmError::AssumptionDViolated { .. } => EXIT_SUBSOLVER,
        _ => EXIT_CONFIG,
    }
}

/// Prints a structured diagnostic on stderr and returns the exit code.
fn fail(e: &DsmError) -> u8 {
    let code = exit_code_for(e);
    let mut diag = json!({
        "level": "error",
        "kind": error_kind(e),
        "message": e.to_string(),
        "exit_code": code,
    });
    if let DsmError::AssumptionA(f) = e {
        diag["failed_items"] = json!(f.failed_items().iter().map(|i| format!("{i:?}")).collect::<Vec<_>>());
    }
    eprintln!("{diag}");
    code
}

fn run_cmd(a: RunArgs) -> Result<u8, DsmError> {
    let mut params = serde_json::Map::new();
    let mut set = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            params.insert(k.into(), v);
        }
    };
    set("gamma0", a.gamma0.map(Value::from));
    set("gamma_exponent", a.gamma_exponent.map(Value::from));
    set("beta", a.beta.map(Value::from));
    set("rho", a.rho.map(Value::from));
    set("lambda", a.lambda.map(Value::from));
    set("tol_d", a.tol_d.map(Value::from));
    set("tol_theta", a.tol_theta.map(Value::from));
    set("tol_feas", a.tol_feas.map(Value::from));
    set("max_iter", a.max_iter.map(Value::from));
    set("ghost_eps_grid", a.ghost_eps.map(Value::from));
    let cfg = RunConfig {
        problem: a.problem,
        algorithm: match a.algorithm {
            AlgoArg::General => Algorithm::General,
            AlgoArg::Convex => Algorithm::Convex,
        },
        params,
        x0: StartPoint::parse(&a.x0)?,
        trace_path: a.trace_out,
        report_path: a.report_out,
        seed: a.seed,
        timing: a.timing,
    };
    let done = execute(&cfg, None)?;
    let r = &done.result;
    let state = done.report.final_state.as_ref();
    println!(
        "{}",
        json!({
            "problem": cfg.problem,
            "stop_reason": r.stop_reason.to_string(),
            "iterations": r.iterations,
            "final_x": done.report.final_x,
            "phi": state.map(|s| s.phi),
            "theta": state.map(|s| s.theta),
            "kkt_residual": state.map(|s| s.kkt_residual),
            "classification": r.classification.kind.to_string(),
        })
    );
    Ok(match r.stop_reason {
        StopReason::Converged => EXIT_OK,
        StopReason::MaxIter => EXIT_MAX_ITER,
        StopReason::SubsolverFailure => {
            if let Some(f) = &r.failure {
                eprintln!("{}", json!({"level": "error", "kind": "SubsolverFailure", "message": f.message, "exit_code": EXIT_SUBSOLVER}));
            }
            EXIT_SUBSOLVER
        }
    })
}

fn check_cmd(a: CheckArgs) -> Result<u8, DsmError> {
    let spec = resolve_problem(&a.problem, None)?;
    let model = default_model(&spec);
    let consistency = check_assumption_a(&spec, &model, a.samples, a.seed)?;
    let gradients = check_gradients(&spec, a.samples, a.seed)?;
    let convexity = if spec.g_convex() {
        let ok = midpoint_convexity_holds(&spec, a.samples, a.seed)?;
        if !ok {
            return Err(DsmError::Configuration(
                "constraints are flagged convex but fail the sampled midpoint test".into(),
            ));
        }
        Some(ok)
    } else {
        None
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "problem": a.problem,
            "surrogate_consistency": consistency,
            "gradients": gradients,
            "midpoint_convexity": convexity,
        }))?
    );
    Ok(EXIT_OK)
}

fn batch_cmd(a: BatchArgs) -> Result<u8, DsmError> {
    let rows = batch::run_batch(&a.config_dir)?;
    let out = a.summary_out.unwrap_or_else(|| a.config_dir.join("summary.csv"));
    batch::write_summary(&rows, &out)?;
    let failed = rows.iter().filter(|r| !r.converged()).count();
    log::info!("batch: {} runs, {failed} not converged; summary at {}", rows.len(), out.display());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_MAX_ITER })
}

fn export_cmd(a: ExportArgs) -> Result<u8, DsmError> {
    let spec = resolve_problem(&a.problem, None)?;
    let text = serde_json::to_string_pretty(&ProblemDoc::from_spec(&spec)?)? + "\n";
    match a.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GHOST_DSM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Check(a) => check_cmd(a),
        Command::Batch(a) => batch_cmd(a),
        Command::Export(a) => export_cmd(a),
    };
    ExitCode::from(result.unwrap_or_else(|e| fail(&e)))
}
