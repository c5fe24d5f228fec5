//! Experiment infrastructure: run configuration, the rollout/training loop,
//! evaluation and its final-window aggregation, mode analysis for the
//! single-step Hard Move task, checkpoints, and SVG learning curves.
//!
//! A run directory holds:
//! - `config.toml`: the exact configuration, enough to re-run bit-identically;
//! - `manifest.json`: config hash, parameter hashes, ablation flags, betas;
//! - `metrics.jsonl`: one record per training iteration and per evaluation;
//! - `checkpoints/`: periodic and final agent snapshots;
//! - `eval_report.json` / `eval_report.csv`.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod modes;
pub mod plot;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, ScheduleConfig};
pub use eval::{evaluate, EvalPoint, EvalReport, EvalResult, Policy, RandomPolicy, ScriptedHardMove, TrialCurve};
pub use modes::{analyze_modes, ModeReport, ModeRow};
pub use plot::plot_runs;
pub use run::{train, train_into, Manifest, RunSummary};

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_file(path)?)?)
}

/// Population mean and standard deviation; exactly zero spread when every
/// value is identical.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
