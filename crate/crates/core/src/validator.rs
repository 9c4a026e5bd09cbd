//! Threshold calibration, verdicts, and experiment delimiting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricResult};
use crate::trace::{Quantity, RunId, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub metric: Metric,
    pub quantity: Quantity,
    pub threshold: f64,
}

/// Acceptance limit per (metric, quantity), taken as the largest value seen
/// during known-normal operation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdTable {
    #[serde(with = "entries_as_list")]
    pub entries: BTreeMap<(Metric, Quantity), f64>,
    pub calibration_run_ids: Vec<RunId>,
}

mod entries_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<(Metric, Quantity), f64>, s: S) -> Result<S::Ok, S::Error> {
        let list: Vec<ThresholdEntry> = map
            .iter()
            .map(|(&(metric, quantity), &threshold)| ThresholdEntry {
                metric,
                quantity,
                threshold,
            })
            .collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(Metric, Quantity), f64>, D::Error> {
        let list = Vec::<ThresholdEntry>::deserialize(d)?;
        Ok(list.into_iter().map(|e| ((e.metric, e.quantity), e.threshold)).collect())
    }
}

impl ThresholdTable {
    pub fn get(&self, metric: Metric, quantity: Quantity) -> Option<f64> {
        self.entries.get(&(metric, quantity)).copied()
    }

    pub fn quantities(&self) -> Vec<Quantity> {
        let mut qs: Vec<Quantity> = self.entries.keys().map(|(_, q)| *q).collect();
        qs.dedup();
        qs.sort();
        qs.dedup();
        qs
    }

    pub fn to_json_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let table: ThresholdTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if table.entries.values().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("thresholds must be finite and non-negative".into()));
        }
        Ok(table)
    }
}

/// Builds a threshold table from metric results of normal runs. Every metric
/// must have been observed at least once for each quantity in `required`.
pub fn calibrate_thresholds(results: &[MetricResult], required: &[Quantity]) -> Result<ThresholdTable> {
    let mut entries: BTreeMap<(Metric, Quantity), f64> = BTreeMap::new();
    let mut runs: Vec<RunId> = Vec::new();
    for r in results {
        if !(r.value.is_finite() && r.value >= 0.0) {
            continue;
        }
        let slot = entries.entry((r.metric, r.quantity)).or_insert(r.value);
        *slot = slot.max(r.value);
        if !runs.contains(&r.run_id) {
            runs.push(r.run_id);
        }
    }
    for &quantity in required {
        for metric in Metric::ALL {
            if !entries.contains_key(&(metric, quantity)) {
                return Err(Error::MissingThreshold {
                    metric: metric.name().to_owned(),
                    quantity,
                });
            }
        }
    }
    entries.retain(|(_, q), _| required.is_empty() || required.contains(q));
    runs.sort();
    Ok(ThresholdTable {
        entries,
        calibration_run_ids: runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerdictPolicy {
    #[default]
    AnyBreach,
    MajorityVote,
}

impl VerdictPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "any" | "any_breach" => Ok(VerdictPolicy::AnyBreach),
            "majority" | "majority_vote" => Ok(VerdictPolicy::MajorityVote),
            other => Err(Error::Config(format!("unknown verdict policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Valid,
    Invalid,
    /// Invalid and the twin could not be re-fitted by parameter estimation;
    /// the model structure itself needs attention.
    NeedsModelRevision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breach {
    pub metric: Metric,
    pub quantity: Quantity,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub run_id: RunId,
    pub status: VerdictStatus,
    pub breaches: Vec<Breach>,
    pub policy: VerdictPolicy,
    /// Number of (metric, quantity) pairs compared against a threshold.
    pub evaluated: usize,
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        self.status == VerdictStatus::Valid
    }
}

/// Compares each result with its threshold; a breach is a value strictly
/// above the threshold.
pub fn evaluate(results: &[MetricResult], table: &ThresholdTable, policy: VerdictPolicy) -> Result<Verdict> {
    let run_id = match results.first() {
        Some(r) => r.run_id,
        None => return Err(Error::precondition("no metric results to evaluate")),
    };
    let mut breaches = Vec::new();
    for r in results {
        let threshold = table.get(r.metric, r.quantity).ok_or_else(|| Error::MissingThreshold {
            metric: r.metric.name().to_owned(),
            quantity: r.quantity,
        })?;
        if r.value > threshold {
            breaches.push(Breach {
                metric: r.metric,
                quantity: r.quantity,
                value: r.value,
                threshold,
            });
        }
    }
    let evaluated = results.len();
    let invalid = match policy {
        VerdictPolicy::AnyBreach => !breaches.is_empty(),
        VerdictPolicy::MajorityVote => 2 * breaches.len() > evaluated,
    };
    Ok(Verdict {
        run_id,
        status: if invalid { VerdictStatus::Invalid } else { VerdictStatus::Valid },
        breaches,
        policy,
        evaluated,
    })
}

/// Named predicates for event-based experiment windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPredicate {
    /// The signal goes from negative to non-negative.
    CrossesZeroUpward,
    /// The signal leaves a band of `|value| <= 1e-9` around zero: a machine
    /// that starts moving after standing still.
    LeavesRest,
}

impl EventPredicate {
    fn fires(self, prev: f64, next: f64) -> bool {
        match self {
            EventPredicate::CrossesZeroUpward => prev < 0.0 && next >= 0.0,
            EventPredicate::LeavesRest => prev.abs() <= 1e-9 && next.abs() > 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentWindow {
    /// One experiment per routine operation (intermittent processes).
    PerRun,
    /// Consecutive half-open windows `[t, t + duration)`.
    TimeBased { duration_s: f64 },
    /// Experiments run from one firing of the predicate to the next.
    EventBased { predicate: EventPredicate },
}

/// What the delimiter is cutting up.
#[derive(Debug, Clone, Copy)]
pub enum ExperimentStream<'a> {
    Runs(&'a [RunId]),
    Samples(&'a Trace),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Run(RunId),
    /// Samples `start..end` of the stream, covering `[t_start, t_end)`.
    Window {
        t_start: f64,
        t_end: f64,
        start: usize,
        end: usize,
    },
}

pub fn delimit(stream: ExperimentStream<'_>, window: &ExperimentWindow) -> Result<Vec<Segment>> {
    match (stream, *window) {
        (ExperimentStream::Runs(runs), ExperimentWindow::PerRun) => {
            Ok(runs.iter().copied().map(Segment::Run).collect())
        }
        (ExperimentStream::Runs(_), _) => Err(Error::Config(
            "run streams can only be delimited per run".into(),
        )),
        (ExperimentStream::Samples(trace), ExperimentWindow::PerRun) => Ok(if trace.is_empty() {
            Vec::new()
        } else {
            vec![Segment::Run(trace.run_id)]
        }),
        (ExperimentStream::Samples(trace), ExperimentWindow::TimeBased { duration_s }) => {
            if !(duration_s > 0.0) {
                return Err(Error::Config("window duration must be positive".into()));
            }
            Ok(time_windows(trace, duration_s))
        }
        (ExperimentStream::Samples(trace), ExperimentWindow::EventBased { predicate }) => {
            Ok(event_windows(trace, predicate))
        }
    }
}

fn time_windows(trace: &Trace, duration: f64) -> Vec<Segment> {
    let Some(&t0) = trace.times.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut start = 0;
    while start < trace.times.len() {
        let k = ((trace.times[start] - t0) / duration).floor();
        let (lo, hi) = (t0 + k * duration, t0 + (k + 1.0) * duration);
        let end = start + trace.times[start..].iter().take_while(|&&t| t < hi).count();
        out.push(Segment::Window {
            t_start: lo,
            t_end: hi,
            start,
            end,
        });
        start = end;
    }
    out
}

fn event_windows(trace: &Trace, predicate: EventPredicate) -> Vec<Segment> {
    let fired: Vec<usize> = trace
        .values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| predicate.fires(w[0], w[1]))
        .map(|(i, _)| i + 1)
        .collect();
    fired
        .windows(2)
        .map(|w| Segment::Window {
            t_start: trace.times[w[0]],
            t_end: trace.times[w[1]],
            start: w[0],
            end: w[1],
        })
        .collect()
}
