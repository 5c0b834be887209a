//! Per-iteration metrics and selection logs as CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: usize,
    /// Mean return of episodes that finished during collection.
    pub mean_return: Option<f64>,
    /// Mean return of the deterministic evaluation episodes, when run.
    pub eval_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub buffer_len: usize,
    pub epsilon: f64,
    pub behavior_id: Option<u64>,
    pub deletions: usize,
    pub epochs_run: usize,
    pub excluded: usize,
}

/// One selection decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub iteration: usize,
    pub snapshot_id: u64,
    pub divergence: f64,
    /// `kept` or `deleted`.
    pub action: String,
}

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 14] = [
    "iteration",
    "env_steps",
    "mean_return",
    "eval_return",
    "policy_loss",
    "value_loss",
    "mean_kl",
    "clip_fraction",
    "buffer_len",
    "epsilon",
    "behavior_id",
    "deletions",
    "epochs_run",
    "excluded",
];

/// Column order of the selection log.
pub const SELECTION_COLUMNS: [&str; 4] = ["iteration", "snapshot_id", "divergence", "action"];

/// Header row first, then one row per record; an empty slice still gets the header.
pub fn write_table<T: Serialize>(rows: &[T], columns: &[&str], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(columns)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(rows: &[IterationMetrics], path: &Path) -> Result<()> {
    write_table(rows, &METRICS_COLUMNS, path)
}

pub fn write_selections(rows: &[SelectionRow], path: &Path) -> Result<()> {
    write_table(rows, &SELECTION_COLUMNS, path)
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
