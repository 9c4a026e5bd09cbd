//! Validation metrics comparing a measured trace `D` with the mean `P̄` (and
//! sample standard deviation `σ`) of replicated twin simulations.
//!
//! Samples where `σ` or `|P̄|` is too small to divide by are excluded from the
//! normalized and relative metrics; a metric whose every sample is excluded is
//! reported as absent rather than as zero or infinity.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Quantity, RunId, Trace, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    MeanNed,
    TotalNed,
    AvgRelErr,
    MaxRelErr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Rmse,
        Metric::MeanNed,
        Metric::TotalNed,
        Metric::AvgRelErr,
        Metric::MaxRelErr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::MeanNed => "mean_ned",
            Metric::TotalNed => "total_ned",
            Metric::AvgRelErr => "avg_rel_err",
            Metric::MaxRelErr => "max_rel_err",
        }
    }

    pub fn from_name(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exclusion thresholds, in the units of the quantity being compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub eps_sigma: f64,
    pub eps_mean: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            eps_sigma: 1e-6,
            eps_mean: 1e-6,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_sigma > 0.0) || !(self.eps_mean > 0.0) {
            return Err(Error::Config("metric exclusion thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample mean and sample standard deviation over `replications` twin runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub run_id: RunId,
    pub quantity: Quantity,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Absent for a single replication.
    pub std: Option<Vec<f64>>,
    pub replications: usize,
}

impl ReplicationSummary {
    pub fn mean_trace(&self) -> Trace {
        Trace {
            run_id: self.run_id,
            quantity: self.quantity,
            kind: TraceKind::SimulatedMean,
            times: self.times.clone(),
            values: self.mean.clone(),
        }
    }

    pub fn std_trace(&self) -> Option<Trace> {
        self.std.as_ref().map(|std| Trace {
            run_id: self.run_id,
            quantity: self.quantity,
            kind: TraceKind::SimulatedStd,
            times: self.times.clone(),
            values: std.clone(),
        })
    }
}

/// A metric value with the sample counts it was computed over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub included: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub run_id: RunId,
    pub quantity: Quantity,
    pub metric: Metric,
    pub value: f64,
    pub included: usize,
    pub excluded: usize,
}

impl MetricResult {
    pub fn new(run_id: RunId, quantity: Quantity, metric: Metric, v: MetricValue) -> Self {
        MetricResult {
            run_id,
            quantity,
            metric,
            value: v.value,
            included: v.included,
            excluded: v.excluded,
        }
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("series lengths {} and {} differ", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Degenerate("empty series".into()));
    }
    Ok(())
}

/// Linearly interpolates `trace` onto `target_times`. Never extrapolates.
pub fn resample(trace: &Trace, target_times: &[f64]) -> Result<Trace> {
    let (Some(&first), Some(&last)) = (trace.times.first(), trace.times.last()) else {
        return Err(Error::Degenerate("cannot resample an empty trace".into()));
    };
    let mut values = Vec::with_capacity(target_times.len());
    let mut j = 0;
    for &t in target_times {
        if !(t >= first && t <= last) {
            return Err(Error::Extrapolation { t, first, last });
        }
        // Targets are usually sorted; restart the scan only when they are not.
        if j >= trace.times.len() || trace.times[j] > t {
            j = 0;
        }
        while j + 1 < trace.times.len() && trace.times[j + 1] <= t {
            j += 1;
        }
        let (t0, v0) = (trace.times[j], trace.values[j]);
        if t == t0 || j + 1 == trace.times.len() {
            values.push(v0);
        } else {
            let (t1, v1) = (trace.times[j + 1], trace.values[j + 1]);
            values.push(v0 + (t - t0) / (t1 - t0) * (v1 - v0));
        }
    }
    Ok(Trace {
        run_id: trace.run_id,
        quantity: trace.quantity,
        kind: trace.kind,
        times: target_times.to_vec(),
        values,
    })
}

/// Root-mean-square error; keeps the unit of the quantity.
pub fn rmse(pred_mean: &[f64], measured: &[f64]) -> Result<MetricValue> {
    check_len(pred_mean, measured)?;
    let sum: f64 = pred_mean.iter().zip(measured).map(|(p, d)| (p - d) * (p - d)).sum();
    Ok(MetricValue {
        value: (sum / pred_mean.len() as f64).sqrt(),
        included: pred_mean.len(),
        excluded: 0,
    })
}

/// Pointwise normalized Euclidean distances and their inclusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseNed {
    /// `|P̄ᵢ - Dᵢ| / σᵢ` for included samples, 0 for excluded ones.
    pub distances: Vec<f64>,
    pub included: Vec<bool>,
}

impl PointwiseNed {
    pub fn included_count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    fn included_distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.distances
            .iter()
            .zip(&self.included)
            .filter(|(_, &inc)| inc)
            .map(|(d, _)| *d)
    }
}

pub fn ned_pointwise(
    pred_mean: &[f64],
    pred_std: &[f64],
    measured: &[f64],
    cfg: &MetricConfig,
) -> Result<PointwiseNed> {
    check_len(pred_mean, measured)?;
    check_len(pred_std, measured)?;
    let mut distances = Vec::with_capacity(measured.len());
    let mut included = Vec::with_capacity(measured.len());
    for ((p, s), d) in pred_mean.iter().zip(pred_std).zip(measured) {
        if *s >= cfg.eps_sigma {
            distances.push((p - d).abs() / s);
            included.push(true);
        } else {
            distances.push(0.0);
            included.push(false);
        }
    }
    let ned = PointwiseNed { distances, included };
    if ned.included_count() == 0 {
        return Err(Error::Degenerate(format!(
            "every standard deviation is below {}",
            cfg.eps_sigma
        )));
    }
    Ok(ned)
}

fn counts(ned: &PointwiseNed) -> Result<(usize, usize)> {
    let n = ned.included_count();
    if n == 0 {
        return Err(Error::Degenerate("no included samples".into()));
    }
    Ok((n, ned.distances.len() - n))
}

/// Mean of the included pointwise distances.
pub fn mean_ned(ned: &PointwiseNed) -> Result<MetricValue> {
    let (included, excluded) = counts(ned)?;
    let sum: f64 = ned.included_distances().sum();
    Ok(MetricValue {
        value: sum / included as f64,
        included,
        excluded,
    })
}

/// Total normalized Euclidean distance, normalized by the included count so
/// runs with different exclusions stay comparable: `sqrt(Σ dᵢ² / N_inc)`.
pub fn total_ned(ned: &PointwiseNed) -> Result<MetricValue> {
    let (included, excluded) = counts(ned)?;
    let sum: f64 = ned.included_distances().map(|d| d * d).sum();
    Ok(MetricValue {
        value: (sum / included as f64).sqrt(),
        included,
        excluded,
    })
}

fn relative_errors<'a>(
    pred_mean: &'a [f64],
    measured: &'a [f64],
    cfg: &'a MetricConfig,
) -> impl Iterator<Item = Option<f64>> + 'a {
    pred_mean.iter().zip(measured).map(move |(p, d)| {
        if p.abs() >= cfg.eps_mean {
            Some(((d - p) / p).abs())
        } else {
            None
        }
    })
}

/// Time-averaged relative error. On a uniform grid the rectangle rule over the
/// included samples reduces to their arithmetic mean.
pub fn avg_rel_err(
    pred_mean: &[f64],
    measured: &[f64],
    times: &[f64],
    cfg: &MetricConfig,
) -> Result<MetricValue> {
    check_len(pred_mean, measured)?;
    check_len(times, measured)?;
    if let [t0, t1, ..] = times {
        let step = t1 - t0;
        if !(step > 0.0) {
            return Err(Error::precondition("time grid must be increasing"));
        }
        if times.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-6 * step) {
            return Err(Error::precondition("average relative error needs a uniform time grid"));
        }
    }
    let (mut sum, mut included) = (0.0, 0usize);
    for r in relative_errors(pred_mean, measured, cfg).flatten() {
        sum += r;
        included += 1;
    }
    if included == 0 {
        return Err(Error::Degenerate(format!("every prediction mean is below {}", cfg.eps_mean)));
    }
    Ok(MetricValue {
        value: sum / included as f64,
        included,
        excluded: measured.len() - included,
    })
}

pub fn max_rel_err(pred_mean: &[f64], measured: &[f64], cfg: &MetricConfig) -> Result<MetricValue> {
    check_len(pred_mean, measured)?;
    let (mut max, mut included) = (0.0f64, 0usize);
    for r in relative_errors(pred_mean, measured, cfg).flatten() {
        max = max.max(r);
        included += 1;
    }
    if included == 0 {
        return Err(Error::Degenerate(format!("every prediction mean is below {}", cfg.eps_mean)));
    }
    Ok(MetricValue {
        value: max,
        included,
        excluded: measured.len() - included,
    })
}

/// Computes every metric that is defined for this data. Degenerate metrics are
/// left out; misaligned inputs are an error.
pub fn compute_all(
    summary: &ReplicationSummary,
    measured: &Trace,
    cfg: &MetricConfig,
) -> Result<Vec<MetricResult>> {
    cfg.validate()?;
    if measured.times != summary.times {
        return Err(Error::Alignment(format!(
            "measured {} trace is not on the simulation grid",
            measured.quantity
        )));
    }
    let (run_id, quantity) = (measured.run_id, summary.quantity);
    let d = measured.values.as_slice();
    let p = summary.mean.as_slice();
    let mut out = Vec::with_capacity(Metric::ALL.len());
    let mut push = |metric, v: Result<MetricValue>| -> Result<()> {
        match v {
            Ok(v) => {
                out.push(MetricResult::new(run_id, quantity, metric, v));
                Ok(())
            }
            Err(Error::Degenerate(_)) => Ok(()),
            Err(e) => Err(e),
        }
    };
    push(Metric::Rmse, rmse(p, d))?;
    if let Some(std) = summary.std.as_deref().filter(|_| summary.replications >= 2) {
        match ned_pointwise(p, std, d, cfg) {
            Ok(ned) => {
                push(Metric::MeanNed, mean_ned(&ned))?;
                push(Metric::TotalNed, total_ned(&ned))?;
            }
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    push(Metric::AvgRelErr, avg_rel_err(p, d, &summary.times, cfg))?;
    push(Metric::MaxRelErr, max_rel_err(p, d, cfg))?;
    Ok(out)
}
