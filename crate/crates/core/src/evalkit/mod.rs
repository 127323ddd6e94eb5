//! Continual-learning metrics: normalized reward, average forgetting and
//! forward transfer over step-indexed performance curves, plus seed
//! aggregation by quartiles.
//!
//! Curves are step functions: the value recorded at step `s` holds until
//! the next recorded step.

mod csvio;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{
    curves_from_rows, read_metrics_csv, read_table_csv, write_components_csv, write_metrics_csv, write_table_csv,
    MetricRow, TableRow, TaskComponentRow,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("curve steps must be strictly increasing (at index {0})")]
    Unordered(usize),
    #[error("non-finite curve value at step {0}")]
    NonFinite(u64),
    #[error("curve has no value at or before step {0}")]
    Undefined(u64),
    #[error("degenerate baseline: single-task and random performance are both {0}")]
    DegenerateBaseline(f64),
    #[error("expected {expected} curves, got {found}")]
    CurveCount { expected: usize, found: usize },
    #[error("empty input")]
    Empty,
    #[error("empty window ({0}, {1}]")]
    EmptyWindow(u64, u64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
}

/// Time-indexed performance record for one evaluation task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfCurve {
    points: Vec<(u64, f64)>,
}

impl PerfCurve {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self, MetricError> {
        for (i, w) in points.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(MetricError::Unordered(i + 1));
            }
        }
        if let Some(&(s, _)) = points.iter().find(|p| !p.1.is_finite()) {
            return Err(MetricError::NonFinite(s));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Value carried forward from the last point at or before `step`.
    pub fn at(&self, step: u64) -> Option<f64> {
        let i = self.points.partition_point(|p| p.0 <= step);
        (i > 0).then(|| self.points[i - 1].1)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, MetricError> {
        Self::new(self.points.iter().map(|&(s, v)| (s, f(v))).collect())
    }

    /// Mean of the step function over the integer steps in `(lo, hi]`.
    /// Each recorded point counts once for every step it covers.
    pub fn window_mean(&self, lo: u64, hi: u64) -> Result<f64, MetricError> {
        if hi <= lo {
            return Err(MetricError::EmptyWindow(lo, hi));
        }
        let first = lo + 1;
        if self.at(first).is_none() {
            return Err(MetricError::Undefined(first));
        }
        let mut sum = 0.0;
        for (i, &(s, v)) in self.points.iter().enumerate() {
            let end = self.points.get(i + 1).map_or(u64::MAX, |p| p.0 - 1);
            let a = s.max(first);
            let b = end.min(hi);
            if a <= b {
                sum += v * (b - a + 1) as f64;
            }
        }
        Ok(sum / (hi - lo) as f64)
    }
}

/// `(p − p_rand) / (p_single − p_rand)`.
pub fn normalize(p: f64, p_rand: f64, p_single: f64) -> Result<f64, MetricError> {
    let span = p_single - p_rand;
    if span == 0.0 || !span.is_finite() {
        return Err(MetricError::DegenerateBaseline(p_single));
    }
    Ok((p - p_rand) / span)
}

pub fn normalize_curve(curve: &PerfCurve, p_rand: f64, p_single: f64) -> Result<PerfCurve, MetricError> {
    normalize(0.0, p_rand, p_single)?;
    curve.map(|p| (p - p_rand) / (p_single - p_rand))
}

/// Average forgetting and its per-task terms `q_τ(τN) − q_τ(TN)`.
pub fn forgetting(q: &[PerfCurve], n: u64) -> Result<(f64, Vec<f64>), MetricError> {
    if q.is_empty() {
        return Err(MetricError::Empty);
    }
    let t = q.len() as u64;
    let mut parts = Vec::with_capacity(q.len());
    for (i, c) in q.iter().enumerate() {
        let own = (i as u64 + 1) * n;
        let after = c.at(own).ok_or(MetricError::Undefined(own))?;
        let end = c.at(t * n).ok_or(MetricError::Undefined(t * n))?;
        parts.push(after - end);
    }
    Ok((parts.iter().sum::<f64>() / parts.len() as f64, parts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    /// Average over the tasks that were not excluded.
    pub average: Option<f64>,
    /// `(S_τ − S_ST,τ) / S_ST,τ`, `None` where `S_ST,τ = 0`.
    pub components: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// Forward transfer of continual curves `q_cl` (global steps) against
/// single-task curves `q_st` (steps within the task).
pub fn forward_transfer(q_cl: &[PerfCurve], q_st: &[PerfCurve], n: u64) -> Result<TransferResult, MetricError> {
    if q_cl.is_empty() {
        return Err(MetricError::Empty);
    }
    if q_st.len() != q_cl.len() {
        return Err(MetricError::CurveCount {
            expected: q_cl.len(),
            found: q_st.len(),
        });
    }
    let mut st_means = Vec::with_capacity(q_st.len());
    for c in q_st {
        st_means.push(c.window_mean(0, n)?);
    }
    transfer_from_single_means(q_cl, &st_means, n)
}

/// As [`forward_transfer`], with the single-task window means given.
pub fn transfer_from_single_means(q_cl: &[PerfCurve], st_means: &[f64], n: u64) -> Result<TransferResult, MetricError> {
    if st_means.len() != q_cl.len() {
        return Err(MetricError::CurveCount {
            expected: q_cl.len(),
            found: st_means.len(),
        });
    }
    let mut components = Vec::with_capacity(q_cl.len());
    let mut excluded = Vec::new();
    for (i, (c, &s_st)) in q_cl.iter().zip(st_means).enumerate() {
        let lo = i as u64 * n;
        let s = c.window_mean(lo, lo + n)?;
        if s_st == 0.0 {
            excluded.push(i);
            components.push(None);
        } else {
            components.push(Some((s - s_st) / s_st));
        }
    }
    let kept: Vec<f64> = components.iter().flatten().copied().collect();
    let average = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64);
    Ok(TransferResult {
        average,
        components,
        excluded,
    })
}

/// Quantile with linear interpolation between order statistics
/// (position `(n − 1)·p` in the sorted sample).
pub fn quantile(values: &[f64], p: f64) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, p))
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Quartiles {
        median: quantile_sorted(&v, 0.5),
        q25: quantile_sorted(&v, 0.25),
        q75: quantile_sorted(&v, 0.75),
    })
}

/// Per-task baselines: random-policy and trained single-task performance,
/// and the single-task normalized window mean used by forward transfer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBaseline {
    pub label: String,
    pub p_rand: f64,
    pub p_single: f64,
    pub single_window_mean: Option<f64>,
}

/// Metrics of one continual run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub labels: Vec<String>,
    pub normalized: Vec<PerfCurve>,
    pub forgetting: f64,
    pub forgetting_components: Vec<f64>,
    pub forward_transfer: Option<f64>,
    pub transfer_components: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// Normalizes the raw curves of a continual run and computes both
/// metrics. Tasks with a degenerate baseline are dropped with a warning.
pub fn suite_metrics(raw: &[PerfCurve], baselines: &[TaskBaseline], n: u64) -> Result<SuiteMetrics, MetricError> {
    if raw.len() != baselines.len() {
        return Err(MetricError::CurveCount {
            expected: baselines.len(),
            found: raw.len(),
        });
    }
    if raw.is_empty() {
        return Err(MetricError::Empty);
    }
    let t = raw.len() as u64;
    let mut warnings = Vec::new();
    let mut labels = Vec::new();
    let mut normalized = Vec::new();
    let mut forgetting_components = Vec::new();
    let mut transfer_components = Vec::new();
    for (i, (c, b)) in raw.iter().zip(baselines).enumerate() {
        let q = match normalize_curve(c, b.p_rand, b.p_single) {
            Ok(q) => q,
            Err(MetricError::DegenerateBaseline(_)) => {
                warnings.push(format!(
                    "task `{}` excluded: single-task and random performance are equal ({})",
                    b.label, b.p_single
                ));
                continue;
            }
            Err(e) => return Err(e),
        };
        let own = (i as u64 + 1) * n;
        let after = q.at(own).ok_or(MetricError::Undefined(own))?;
        let end = q.at(t * n).ok_or(MetricError::Undefined(t * n))?;
        forgetting_components.push(after - end);
        let s = q.window_mean(i as u64 * n, own)?;
        match b.single_window_mean {
            Some(s_st) if s_st != 0.0 => transfer_components.push(Some((s - s_st) / s_st)),
            _ => {
                warnings.push(format!(
                    "task `{}` excluded from forward transfer: zero single-task window mean",
                    b.label
                ));
                transfer_components.push(None);
            }
        }
        labels.push(b.label.clone());
        normalized.push(q);
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let forgetting = forgetting_components.iter().sum::<f64>() / forgetting_components.len() as f64;
    let kept: Vec<f64> = transfer_components.iter().flatten().copied().collect();
    let forward_transfer = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64);
    Ok(SuiteMetrics {
        labels,
        normalized,
        forgetting,
        forgetting_components,
        forward_transfer,
        transfer_components,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub seeds: usize,
    pub forgetting: Quartiles,
    pub forward_transfer: Option<Quartiles>,
}

pub fn aggregate_seeds(runs: &[SuiteMetrics]) -> Result<AggregateMetrics, MetricError> {
    if runs.is_empty() {
        return Err(MetricError::Empty);
    }
    let f: Vec<f64> = runs.iter().map(|r| r.forgetting).collect();
    let ft: Vec<f64> = runs.iter().filter_map(|r| r.forward_transfer).collect();
    Ok(AggregateMetrics {
        seeds: runs.len(),
        forgetting: quartiles(&f)?,
        forward_transfer: quartiles(&ft).ok(),
    })
}
