//! Parallel execution of a directory of run configurations.

use std::path::{Path, PathBuf};

use ghost_dsm::driver::StopReason;
use ghost_dsm::{DsmError, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{execute, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub id: String,
    pub stop_reason: String,
    pub iterations: Option<usize>,
    pub final_phi: Option<f64>,
    pub final_theta: Option<f64>,
    pub final_kkt_residual: Option<f64>,
    pub classification: Option<String>,
    pub error: Option<String>,
}

impl SummaryRow {
    pub fn converged(&self) -> bool {
        self.stop_reason == StopReason::Converged.to_string()
    }
}

/// `*.json` files of `dir`, sorted by name.
pub fn config_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn run_one(path: &Path) -> SummaryRow {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let base = path.parent();
    let outcome = std::fs::read_to_string(path)
        .map_err(DsmError::from)
        .and_then(|text| serde_json::from_str::<RunConfig>(&text).map_err(DsmError::from))
        .and_then(|cfg| execute(&cfg, base));
    match outcome {
        Ok(done) => {
            let last = done.result.last_record();
            SummaryRow {
                id,
                stop_reason: done.result.stop_reason.to_string(),
                iterations: Some(done.result.iterations),
                final_phi: last.map(|r| r.phi),
                final_theta: last.map(|r| r.theta),
                final_kkt_residual: last.map(|r| r.kkt_residual),
                classification: Some(done.result.classification.kind.to_string()),
                error: done.result.failure.map(|f| f.message),
            }
        }
        Err(e) => {
            log::error!("{id}: {e}");
            SummaryRow {
                id,
                stop_reason: "Error".into(),
                iterations: None,
                final_phi: None,
                final_theta: None,
                final_kkt_residual: None,
                classification: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs every config in parallel; rows come back in file-name order.
pub fn run_batch(dir: &Path) -> Result<Vec<SummaryRow>> {
    let files = config_files(dir)?;
    Ok(files.par_iter().map(|p| run_one(p)).collect())
}

pub fn write_summary(rows: &[SummaryRow], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out).map_err(|e| DsmError::Io(e.into()))?;
    if rows.is_empty() {
        w.write_record([
            "id",
            "stop_reason",
            "iterations",
            "final_phi",
            "final_theta",
            "final_kkt_residual",
            "classification",
            "error",
        ])
        .map_err(|e| DsmError::Io(e.into()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| DsmError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
