//! Fault-injection studies: metric sensitivity to a rope-length error,
//! detection of a top-speed deficit, and recovery of the true top speed.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{as_config, execute_run, ExecutionConfig, Move, RunData, STORE_ENV};
use crate::error::{Error, Result};
use crate::estimation::{estimate_parameters, EstimationProblem, EstimationResult, InitialGuessPolicy, NelderMeadOptions};
use crate::metrics::{Metric, MetricResult};
use crate::plant::{apply_fault, FaultSpec, ParamName};
use crate::replication::IcUncertainty;
use crate::store::{RunStatus, SeriesTable, Store};
use crate::trace::{Quantity, RunId};
use crate::trajectory::NoiseSpec;
use crate::validator::{calibrate_thresholds, ThresholdTable};

const STUDY_EPOCH_S: f64 = 1_700_000_000.0;
const STUDY_RUN_SPACING_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub nominal_runs: usize,
    pub runs_per_delta: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_step: f64,
    pub quantity: Quantity,
    /// Measurement noise of the sweep; the sweep is run purely in simulation.
    pub noise: NoiseSpec,
    /// Defaults to [`IcUncertainty::amplitude_bound`] of the default noise.
    pub ic_uncertainty: Option<IcUncertainty>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            nominal_runs: 50,
            runs_per_delta: 30,
            delta_min: -0.10,
            delta_max: 0.10,
            delta_step: 0.005,
            quantity: Quantity::AngularPosition,
            noise: NoiseSpec::silent(),
            ic_uncertainty: None,
        }
    }
}

impl SensitivityConfig {
    /// Grid points, computed by index so they do not drift.
    pub fn deltas(&self) -> Vec<f64> {
        let n = ((self.delta_max - self.delta_min) / self.delta_step).round() as i64;
        (0..=n)
            .map(|k| {
                let d = self.delta_min + k as f64 * self.delta_step;
                // Snap to the step's decimal grid so 0 is exactly 0.
                (d / self.delta_step).round() * self.delta_step
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub normal_runs: usize,
    pub runs_per_delta: usize,
    pub deltas: Vec<f64>,
    pub quantities: Vec<Quantity>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            normal_runs: 10,
            runs_per_delta: 10,
            deltas: vec![0.02, 0.05, 0.10, 0.15, 0.20],
            quantities: Quantity::VALIDATED.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationStudyConfig {
    pub divergent_runs: usize,
    pub delta: f64,
    pub policies: Vec<InitialGuessPolicy>,
    pub optimizer: NelderMeadOptions,
    /// Histogram range around the true value, as fractions of it.
    pub histogram_low: f64,
    pub histogram_high: f64,
    pub histogram_bins: usize,
}

impl Default for EstimationStudyConfig {
    fn default() -> Self {
        EstimationStudyConfig {
            divergent_runs: 50,
            delta: 0.10,
            policies: vec![
                InitialGuessPolicy::ReferenceMax,
                InitialGuessPolicy::FractionOfReference(0.9),
                InitialGuessPolicy::MeasuredMaxPassthrough,
            ],
            optimizer: NelderMeadOptions::default(),
            histogram_low: 0.9,
            histogram_high: 1.1,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub machine: String,
    pub execution: ExecutionConfig,
    #[serde(rename = "move")]
    pub mv: Move,
    pub out: PathBuf,
    pub store: Option<PathBuf>,
    /// Keep reference and measured traces of every study run. Off by default:
    /// a sensitivity sweep enacts well over a thousand runs.
    pub persist_traces: bool,
    pub sensitivity: SensitivityConfig,
    pub detection: DetectionConfig,
    pub estimation: EstimationStudyConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            machine: "gantry-1".into(),
            execution: ExecutionConfig::default(),
            mv: Move::default(),
            out: PathBuf::from("out"),
            store: None,
            persist_traces: false,
            sensitivity: SensitivityConfig::default(),
            detection: DetectionConfig::default(),
            estimation: EstimationStudyConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: StudyConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.execution.resolve(path.parent().unwrap_or(std::path::Path::new(".")))?;
        Ok(cfg)
    }

    pub fn store_dir(&self) -> PathBuf {
        match std::env::var_os(STORE_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.store.clone().unwrap_or_else(|| self.out.join("store")),
        }
    }

    fn validate(&self) -> Result<()> {
        self.execution.validate()?;
        let track = self.execution.params.track_length_m;
        if ![self.mv.start_m, self.mv.end_m].iter().all(|p| (0.0..=track).contains(p)) {
            return Err(Error::Config("the study move leaves the track".into()));
        }
        Ok(())
    }
}

/// One condition of a study, aggregated over its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub condition: String,
    pub delta: f64,
    pub metric: Option<Metric>,
    pub quantity: Option<Quantity>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub threshold: Option<f64>,
    /// Runs whose value exceeds the threshold (or, for estimates, misses the
    /// truth by more than 5%).
    pub breaches: usize,
    pub runs: usize,
    pub run_ids: Vec<RunId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub label: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    pub fn new(label: &str, low: f64, high: f64, bins: usize, values: &[f64]) -> Self {
        let bins = bins.max(1);
        let width = (high - low) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| low + k as f64 * width).collect();
        let mut h = Histogram {
            label: label.to_owned(),
            edges,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        };
        for &v in values {
            if v < low {
                h.below += 1;
            } else if v >= high {
                h.above += 1;
            } else {
                let k = (((v - low) / width) as usize).min(bins - 1);
                h.counts[k] += 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub run_id: RunId,
    pub policy: String,
    pub initial_guess: f64,
    pub estimate: f64,
    pub truth: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    pub seed: u64,
    pub rows: Vec<StudyRow>,
    pub summary: BTreeMap<String, f64>,
    pub thresholds: Option<ThresholdTable>,
    pub histograms: Vec<Histogram>,
    pub estimates: Vec<EstimateRecord>,
}

impl StudyReport {
    fn new(study: &str, seed: u64) -> Self {
        StudyReport {
            study: study.to_owned(),
            seed,
            rows: Vec::new(),
            summary: BTreeMap::new(),
            thresholds: None,
            histograms: Vec::new(),
            estimates: Vec::new(),
        }
    }

    pub fn row(&self, condition_delta: f64, metric: Metric, quantity: Quantity) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.delta == condition_delta && r.metric == Some(metric) && r.quantity == Some(quantity))
    }
}

struct Executed {
    run_id: RunId,
    metrics: Vec<MetricResult>,
    estimates: Vec<EstimationResult>,
}

struct Study<'a> {
    cfg: &'a StudyConfig,
    store: Store,
    machine_id: u64,
}

impl<'a> Study<'a> {
    fn open(cfg: &'a StudyConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = Store::open(cfg.store_dir())?;
        let machine_id = store.ensure_machine(&cfg.machine)?;
        Ok(Study { cfg, store, machine_id })
    }

    /// Registers one run per fault, executes them in parallel and stores the
    /// results in run order.
    fn execute(
        &mut self,
        faults: &[FaultSpec],
        quantities: &[Quantity],
        estimation: Option<&EstimationStudyConfig>,
    ) -> Result<Vec<Executed>> {
        let exec = &self.cfg.execution;
        let base = exec.params;
        let mut run_ids = Vec::with_capacity(faults.len());
        for fault in faults {
            let start = STUDY_EPOCH_S + self.store.next_run_id().0 as f64 * STUDY_RUN_SPACING_S;
            run_ids.push(self.store.new_run(self.machine_id, start, *fault)?);
        }
        let persist = self.cfg.persist_traces;
        let mv = self.cfg.mv;
        let results: Vec<(Executed, Option<RunData>)> = run_ids
            .par_iter()
            .zip(faults)
            .map(|(&run_id, fault)| -> Result<(Executed, Option<RunData>)> {
                let plant = apply_fault(&base, fault)?;
                let mut data = execute_run(exec, run_id, &base, &plant, mv, quantities)?;
                let mut estimates = Vec::new();
                if let Some(est) = estimation {
                    let fit = data.estimation_data();
                    for &policy in &est.policies {
                        let problem = EstimationProblem::v_max(&fit, policy)?;
                        estimates.push(estimate_parameters(
                            &fit,
                            &base,
                            &problem,
                            policy,
                            &est.optimizer,
                            &exec.simulation,
                            None,
                        )?);
                    }
                }
                let executed = Executed {
                    run_id,
                    metrics: std::mem::take(&mut data.metrics),
                    estimates,
                };
                Ok((executed, persist.then_some(data)))
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(results.len());
        for (executed, data) in results {
            let run_id = executed.run_id;
            if let Some(data) = data {
                let refs = data.trajectory.reference_traces();
                self.store
                    .insert_trace(SeriesTable::Trajectory, refs.require(Quantity::Position)?, None)?;
                self.store
                    .insert_trace(SeriesTable::Trajectory, refs.require(Quantity::Velocity)?, None)?;
                for q in Quantity::STATE {
                    self.store
                        .insert_trace(SeriesTable::Measurement, data.enactment.measured.require(q)?, None)?;
                }
                self.store
                    .insert_trace(SeriesTable::Measurement, &data.enactment.commanded, None)?;
            }
            self.store.insert_simulation(run_id, exec.replications as u32)?;
            for m in &executed.metrics {
                self.store.insert_metric(m)?;
            }
            self.store.set_run_status(run_id, RunStatus::Validated)?;
            out.push(executed);
        }
        Ok(out)
    }
}

fn stats(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None, None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(mean), std, Some(min), Some(max))
}

fn metric_rows(
    condition: &str,
    delta: f64,
    runs: &[&Executed],
    quantities: &[Quantity],
    thresholds: &ThresholdTable,
) -> Vec<StudyRow> {
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        for &quantity in quantities {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.metrics.iter().find(|m| m.metric == metric && m.quantity == quantity))
                .map(|m| m.value)
                .collect();
            let threshold = thresholds.get(metric, quantity);
            let (mean, std, min, max) = stats(&values);
            rows.push(StudyRow {
                condition: condition.to_owned(),
                delta,
                metric: Some(metric),
                quantity: Some(quantity),
                mean,
                std,
                min,
                max,
                threshold,
                breaches: threshold.map_or(0, |t| values.iter().filter(|v| **v > t).count()),
                runs: runs.len(),
                run_ids: runs.iter().map(|r| r.run_id).collect(),
            });
        }
    }
    rows
}

fn calibrate(runs: &[Executed], quantities: &[Quantity]) -> Result<ThresholdTable> {
    let all: Vec<MetricResult> = runs.iter().flat_map(|r| r.metrics.iter().copied()).collect();
    let mut table = calibrate_thresholds(&all, quantities)?;
    table.calibration_run_ids = runs.iter().map(|r| r.run_id).collect();
    Ok(table)
}

/// Metric response to a rope-length error on a single repeated move. The
/// zero-error condition reuses the nominal runs the thresholds came from.
pub fn study_sensitivity(cfg: &StudyConfig) -> Result<StudyReport> {
    let sc = &cfg.sensitivity;
    if sc.nominal_runs == 0 || sc.runs_per_delta == 0 || !(sc.delta_step > 0.0) || sc.delta_max < sc.delta_min {
        return Err(Error::Config("sensitivity grid or run counts are empty".into()));
    }
    let mut sweep = cfg.clone();
    sweep.execution.noise = sc.noise;
    sweep.execution.ic_uncertainty = Some(
        sc.ic_uncertainty
            .unwrap_or_else(|| IcUncertainty::amplitude_bound(&NoiseSpec::default(), &cfg.execution.params)),
    );
    let cfg = &sweep;
    let mut study = Study::open(cfg)?;
    let quantities = [sc.quantity];
    let nominal = study.execute(&vec![FaultSpec::NONE; sc.nominal_runs], &quantities, None)?;
    let thresholds = calibrate(&nominal, &quantities)?;
    let mut report = StudyReport::new("sensitivity", cfg.execution.seed);
    for delta in sc.deltas() {
        let executed;
        let runs: Vec<&Executed> = if delta == 0.0 {
            nominal.iter().take(sc.runs_per_delta).collect()
        } else {
            let fault = FaultSpec::rope_length(delta);
            executed = study.execute(&vec![fault; sc.runs_per_delta], &quantities, None)?;
            executed.iter().collect()
        };
        report
            .rows
            .extend(metric_rows("rope_length", delta, &runs, &quantities, &thresholds));
    }
    report.summary.insert("nominal_runs".into(), sc.nominal_runs as f64);
    report.summary.insert("runs_per_delta".into(), sc.runs_per_delta as f64);
    report.thresholds = Some(thresholds);
    Ok(report)
}

/// Breach counts for a growing top-speed deficit of the plant.
pub fn study_detection(cfg: &StudyConfig) -> Result<StudyReport> {
    let dc = &cfg.detection;
    if dc.normal_runs == 0 || dc.runs_per_delta == 0 || dc.quantities.is_empty() {
        return Err(Error::Config("detection study needs runs and quantities".into()));
    }
    let mut study = Study::open(cfg)?;
    let normal = study.execute(&vec![FaultSpec::NONE; dc.normal_runs], &dc.quantities, None)?;
    let thresholds = calibrate(&normal, &dc.quantities)?;
    let mut report = StudyReport::new("detection", cfg.execution.seed);
    let normal_refs: Vec<&Executed> = normal.iter().collect();
    report
        .rows
        .extend(metric_rows("velocity_deficit", 0.0, &normal_refs, &dc.quantities, &thresholds));
    report
        .summary
        .insert("runs_with_breach@0".into(), runs_with_breach(&normal_refs, &thresholds) as f64);
    for &delta in &dc.deltas {
        let fault = FaultSpec::velocity_deficit(delta);
        fault.validate().map_err(as_config)?;
        let executed = study.execute(&vec![fault; dc.runs_per_delta], &dc.quantities, None)?;
        let runs: Vec<&Executed> = executed.iter().collect();
        report
            .rows
            .extend(metric_rows("velocity_deficit", delta, &runs, &dc.quantities, &thresholds));
        report
            .summary
            .insert(format!("runs_with_breach@{delta}"), runs_with_breach(&runs, &thresholds) as f64);
    }
    report.thresholds = Some(thresholds);
    Ok(report)
}

fn runs_with_breach(runs: &[&Executed], thresholds: &ThresholdTable) -> usize {
    runs.iter()
        .filter(|r| {
            r.metrics
                .iter()
                .any(|m| thresholds.get(m.metric, m.quantity).is_some_and(|t| m.value > t))
        })
        .count()
}

/// Top-speed estimates on runs with a known deficit, under each initial-guess
/// policy.
pub fn study_estimation(cfg: &StudyConfig) -> Result<StudyReport> {
    let ec = &cfg.estimation;
    if ec.divergent_runs == 0 || ec.policies.is_empty() {
        return Err(Error::Config("estimation study needs runs and policies".into()));
    }
    let fault = FaultSpec::velocity_deficit(ec.delta);
    fault.validate().map_err(as_config)?;
    let truth = apply_fault(&cfg.execution.params, &fault)?.v_max_mps;
    let mut study = Study::open(cfg)?;
    let executed = study.execute(&vec![fault; ec.divergent_runs], &Quantity::VALIDATED, Some(ec))?;
    let mut report = StudyReport::new("estimation", cfg.execution.seed);
    report.summary.insert("true_v_max_mps".into(), truth);
    for (k, policy) in ec.policies.iter().enumerate() {
        let label = policy.label();
        let records: Vec<EstimateRecord> = executed
            .iter()
            .map(|r| {
                let e = &r.estimates[k];
                let estimate = e.value(ParamName::VMax).unwrap_or(f64::NAN);
                EstimateRecord {
                    run_id: r.run_id,
                    policy: label.clone(),
                    initial_guess: e.initial_guess[0],
                    estimate,
                    truth,
                    relative_error: (estimate - truth) / truth,
                    iterations: e.iterations,
                    converged: e.converged,
                }
            })
            .collect();
        let values: Vec<f64> = records.iter().map(|r| r.estimate).collect();
        let (mean, std, min, max) = stats(&values);
        report.rows.push(StudyRow {
            condition: label.clone(),
            delta: ec.delta,
            metric: None,
            quantity: None,
            mean,
            std,
            min,
            max,
            threshold: None,
            breaches: records.iter().filter(|r| !(r.relative_error.abs() <= 0.05)).count(),
            runs: records.len(),
            run_ids: records.iter().map(|r| r.run_id).collect(),
        });
        if let (Some(mean), Some(std)) = (mean, std) {
            report.summary.insert(format!("{label}.mean"), mean);
            report.summary.insert(format!("{label}.std"), std);
            report.summary.insert(format!("{label}.mean_relative_error"), (mean - truth) / truth);
        }
        let converged = records.iter().filter(|r| r.converged).count();
        report.summary.insert(format!("{label}.converged"), converged as f64);
        report.histograms.push(Histogram::new(
            &label,
            ec.histogram_low * truth,
            ec.histogram_high * truth,
            ec.histogram_bins,
            &values,
        ));
        report.estimates.extend(records);
    }
    Ok(report)
}
