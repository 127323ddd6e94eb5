//! CSV records exchanged between the trainer, the evaluator and the chart
//! emitter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricError, PerfCurve};
use crate::persist::write_atomic;

/// One evaluation point: mean episodic reward on `eval_task` after
/// `global_step` environment steps, while `task_trained` was active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub global_step: u64,
    pub task_trained: String,
    pub eval_task: String,
    pub episodic_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub avg_forgetting_median: f64,
    pub avg_forgetting_q25: f64,
    pub avg_forgetting_q75: f64,
    pub avg_fwd_transfer_median: Option<f64>,
    pub avg_fwd_transfer_q25: Option<f64>,
    pub avg_fwd_transfer_q75: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskComponentRow {
    pub model: String,
    pub seed: u64,
    pub task: String,
    pub forgetting: f64,
    pub fwd_transfer: Option<f64>,
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>, MetricError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| MetricError::Io(e.into_error()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, MetricError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub const METRIC_COLUMNS: [&str; 4] = ["global_step", "task_trained", "eval_task", "episodic_reward"];

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), MetricError> {
    write_atomic(path, &to_csv(rows, &METRIC_COLUMNS)?)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, MetricError> {
    let rows: Vec<MetricRow> = from_csv(path)?;
    if let Some(r) = rows.iter().find(|r| !r.episodic_reward.is_finite()) {
        return Err(MetricError::NonFinite(r.global_step));
    }
    Ok(rows)
}

pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<(), MetricError> {
    let header = [
        "model",
        "avg_forgetting_median",
        "avg_forgetting_q25",
        "avg_forgetting_q75",
        "avg_fwd_transfer_median",
        "avg_fwd_transfer_q25",
        "avg_fwd_transfer_q75",
    ];
    write_atomic(path, &to_csv(rows, &header)?)?;
    Ok(())
}

pub fn read_table_csv(path: &Path) -> Result<Vec<TableRow>, MetricError> {
    from_csv(path)
}

pub fn write_components_csv(path: &Path, rows: &[TaskComponentRow]) -> Result<(), MetricError> {
    let header = ["model", "seed", "task", "forgetting", "fwd_transfer"];
    write_atomic(path, &to_csv(rows, &header)?)?;
    Ok(())
}

/// Groups rows by evaluation task, in order of first appearance.
pub fn curves_from_rows(rows: &[MetricRow]) -> Result<Vec<(String, PerfCurve)>, MetricError> {
    let mut order: Vec<String> = Vec::new();
    let mut points: Vec<Vec<(u64, f64)>> = Vec::new();
    for r in rows {
        let i = match order.iter().position(|l| *l == r.eval_task) {
            Some(i) => i,
            None => {
                order.push(r.eval_task.clone());
                points.push(Vec::new());
                order.len() - 1
            }
        };
        points[i].push((r.global_step, r.episodic_reward));
    }
    order
        .into_iter()
        .zip(points)
        .map(|(l, p)| PerfCurve::new(p).map(|c| (l, c)))
        .collect()
}
