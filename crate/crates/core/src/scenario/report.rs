//! Machine-readable reports: a JSON summary, CSV tables and whitespace
//! separated `.dat` files that gnuplot reads directly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::studies::StudyReport;
use crate::error::Result;
use crate::metrics::{Metric, MetricResult};
use crate::store::{RunRecord, Store};
use crate::trace::{Quantity, RunId};
use crate::validator::{evaluate, ThresholdTable, Verdict, VerdictPolicy};

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn dat(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_owned(), |v| v.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

/// Writes `<study>.json`, `<study>.csv` and the study's data files into
/// `dir`. Returns the paths written, in a fixed order.
pub fn write_study_report(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let name = &report.study;
    let mut written = Vec::new();

    let json = dir.join(format!("{name}.json"));
    write_json(&json, report)?;
    written.push(json);

    let rows = dir.join(format!("{name}.csv"));
    let mut w = csv_writer(&rows)?;
    w.write_record([
        "condition", "delta", "metric", "quantity", "mean", "std", "min", "max", "threshold", "breaches", "runs",
        "run_ids",
    ])?;
    for r in &report.rows {
        let ids: Vec<String> = r.run_ids.iter().map(|id| id.to_string()).collect();
        w.write_record([
            r.condition.clone(),
            r.delta.to_string(),
            r.metric.map(|m| m.name().to_owned()).unwrap_or_default(),
            r.quantity.map(|q| q.name().to_owned()).unwrap_or_default(),
            cell(r.mean),
            cell(r.std),
            cell(r.min),
            cell(r.max),
            cell(r.threshold),
            r.breaches.to_string(),
            r.runs.to_string(),
            ids.join(";"),
        ])?;
    }
    w.flush()?;
    written.push(rows);

    if !report.estimates.is_empty() {
        let path = dir.join(format!("{name}_estimates.csv"));
        let mut w = csv_writer(&path)?;
        for e in &report.estimates {
            w.serialize(e)?;
        }
        w.flush()?;
        written.push(path);
    }
    if !report.histograms.is_empty() {
        let path = dir.join(format!("{name}_histogram.csv"));
        let mut w = csv_writer(&path)?;
        w.write_record(["policy", "bin_low", "bin_high", "count"])?;
        for h in &report.histograms {
            w.write_record([h.label.clone(), "-inf".into(), h.edges[0].to_string(), h.below.to_string()])?;
            for (k, c) in h.counts.iter().enumerate() {
                w.write_record([h.label.clone(), h.edges[k].to_string(), h.edges[k + 1].to_string(), c.to_string()])?;
            }
            let last = h.edges[h.edges.len() - 1];
            w.write_record([h.label.clone(), last.to_string(), "inf".into(), h.above.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }
    written.extend(write_dat_files(report, dir)?);
    Ok(written)
}

fn write_dat_files(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let name = &report.study;
    let mut written = Vec::new();
    let metric_quantities: Vec<(Metric, Quantity)> = {
        let mut v: Vec<(Metric, Quantity)> =
            report.rows.iter().filter_map(|r| Some((r.metric?, r.quantity?))).collect();
        v.sort();
        v.dedup();
        v
    };
    match name.as_str() {
        "sensitivity" => {
            for (metric, quantity) in &metric_quantities {
                let mut text = format!("# {} of {} vs rope-length error\n# delta mean min max threshold\n", metric, quantity);
                for r in report
                    .rows
                    .iter()
                    .filter(|r| r.metric == Some(*metric) && r.quantity == Some(*quantity))
                {
                    let _ = writeln!(text, "{} {} {} {} {}", r.delta, dat(r.mean), dat(r.min), dat(r.max), dat(r.threshold));
                }
                let path = dir.join(format!("{name}_{}_{}.dat", metric.name(), quantity.name()));
                fs::write(&path, text)?;
                written.push(path);
            }
        }
        "detection" => {
            let mut text = String::from("# breach rate per top-speed deficit\n# delta");
            for (m, q) in &metric_quantities {
                let _ = write!(text, " {}:{}", m.name(), q.name());
            }
            text.push('\n');
            let mut deltas: Vec<f64> = report.rows.iter().map(|r| r.delta).collect();
            deltas.dedup();
            for d in deltas {
                let _ = write!(text, "{d}");
                for (m, q) in &metric_quantities {
                    let rate = report
                        .rows
                        .iter()
                        .find(|r| r.delta == d && r.metric == Some(*m) && r.quantity == Some(*q))
                        .map(|r| r.breaches as f64 / r.runs.max(1) as f64);
                    let _ = write!(text, " {}", dat(rate));
                }
                text.push('\n');
            }
            let path = dir.join(format!("{name}_breach_rate.dat"));
            fs::write(&path, text)?;
            written.push(path);
        }
        _ => {
            for h in &report.histograms {
                let mut text = format!("# estimate histogram, {}\n# bin_center count\n", h.label);
                for (k, c) in h.counts.iter().enumerate() {
                    let _ = writeln!(text, "{} {}", 0.5 * (h.edges[k] + h.edges[k + 1]), c);
                }
                let slug: String = h
                    .label
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
                    .collect();
                let path = dir.join(format!("{name}_{}.dat", slug.trim_end_matches('_')));
                fs::write(&path, text)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// What the store knows about one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: RunRecord,
    pub metrics: Vec<MetricResult>,
    pub verdict: Option<Verdict>,
}

pub fn run_report(
    store: &Store,
    run_id: RunId,
    thresholds: Option<&ThresholdTable>,
    policy: VerdictPolicy,
) -> Result<RunReport> {
    let run = *store.run(run_id)?;
    let metrics = store.query_metrics(run_id)?;
    let verdict = thresholds.map(|t| evaluate(&metrics, t, policy)).transpose()?;
    Ok(RunReport { run, metrics, verdict })
}

/// Writes `run_<id>.json` and `run_<id>_metrics.csv`.
pub fn write_run_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let id = report.run.run_id;
    let json = dir.join(format!("run_{id}.json"));
    write_json(&json, report)?;
    let csv_path = dir.join(format!("run_{id}_metrics.csv"));
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["run_id", "quantity", "metric", "value", "included", "excluded"])?;
    for m in &report.metrics {
        w.write_record([
            id.to_string(),
            m.quantity.name().to_owned(),
            m.metric.name().to_owned(),
            m.value.to_string(),
            m.included.to_string(),
            m.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec![json, csv_path])
}

/// Writes `scenario.json` and `verdicts.csv`.
pub fn write_scenario_report(report: &super::ScenarioReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join("scenario.json");
    write_json(&json, report)?;
    let path = dir.join("verdicts.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "index", "run_id", "fault_kind", "fault_delta", "twin_v_max_mps", "calibration", "status", "breaches",
        "estimate_v_max_mps", "error",
    ])?;
    for r in &report.runs {
        let status = r.verdict.as_ref().map(|v| {
            serde_json::to_value(v.status)
                .ok()
                .and_then(|s| s.as_str().map(str::to_owned))
                .unwrap_or_default()
        });
        w.write_record([
            r.index.to_string(),
            r.run_id.to_string(),
            r.fault.kind.name().to_owned(),
            r.fault.delta_fraction.to_string(),
            r.twin_v_max_mps.to_string(),
            r.calibration.to_string(),
            status.unwrap_or_else(|| "aborted".into()),
            r.verdict.as_ref().map_or(String::new(), |v| v.breaches.len().to_string()),
            cell(r.estimation.as_ref().and_then(|e| e.value(crate::plant::ParamName::VMax))),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(vec![json, path])
}
