//! The continuous-validation loop: plan a move with the current twin, let the
//! plant execute it, replicate the twin, compare, decide, and re-fit the twin
//! when it no longer matches.

mod report;
mod studies;

pub use report::{run_report, write_run_report, write_scenario_report, write_study_report, RunReport};
pub use studies::{
    study_detection, study_estimation, study_sensitivity, DetectionConfig, EstimateRecord, EstimationStudyConfig,
    Histogram, SensitivityConfig, StudyConfig, StudyReport, StudyRow,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bus::{topics, EventBus, Subscription};
use crate::error::{Error, Result};
use crate::estimation::{estimate_parameters, EstimationData, EstimationProblem, EstimationResult, InitialGuessPolicy, NelderMeadOptions};
use crate::metrics::{compute_all, resample, MetricConfig, MetricResult, ReplicationSummary};
use crate::plant::{apply_fault, CraneParams, FaultSpec, ParamName, SimulationOptions};
use crate::replication::{simulate_replications, IcUncertainty, ReplicationPlan, ReplicationSet};
use crate::store::{RunStatus, SeriesTable, Store};
use crate::trace::{Quantity, RunId, Trace};
use crate::trajectory::{enact, generate_trajectory, Enactment, NoiseSpec, Trajectory, TrajectorySample};
use crate::validator::{calibrate_thresholds, evaluate, ThresholdTable, Verdict, VerdictPolicy, VerdictStatus};

/// Relative margin below the planned peak speed within which a fitted top
/// speed counts as unidentified.
const PLATEAU_TOLERANCE: f64 = 1e-3;

/// Environment variable that overrides where the store lives.
pub const STORE_ENV: &str = "TWINWATCH_STORE";

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INVALID: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const ABORTED: i32 = 4;
}

/// A fault active on runs `first_run..=last_run` (1-based run indices within
/// the scenario).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultWindow {
    pub first_run: usize,
    pub last_run: usize,
    pub fault: FaultSpec,
}

/// A lateral move of the trolley.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub start_m: f64,
    pub end_m: f64,
}

impl Default for Move {
    fn default() -> Self {
        Move { start_m: 0.1, end_m: 0.6 }
    }
}

/// Settings shared by scenarios and studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    /// JSON file with the twin's initial parameters. Takes precedence over
    /// `params`; relative paths resolve against the config file.
    pub params_file: Option<PathBuf>,
    pub params: CraneParams,
    pub noise: NoiseSpec,
    pub replications: usize,
    /// Defaults to the measurement noise (see [`IcUncertainty::from_noise`]).
    pub ic_uncertainty: Option<IcUncertainty>,
    pub metrics: MetricConfig,
    pub simulation: SimulationOptions,
    pub seed: u64,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            params_file: None,
            params: CraneParams::default(),
            noise: NoiseSpec::default(),
            replications: 30,
            ic_uncertainty: None,
            metrics: MetricConfig::default(),
            simulation: SimulationOptions::default(),
            seed: 0,
        }
    }
}

impl ExecutionConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(as_config)?;
        self.noise.validate().map_err(as_config)?;
        self.metrics.validate().map_err(as_config)?;
        self.simulation.steps_per_sample().map_err(as_config)?;
        self.plan(RunId(0)).validate()
    }

    pub fn ic(&self) -> IcUncertainty {
        self.ic_uncertainty
            .unwrap_or_else(|| IcUncertainty::from_noise(&self.noise, self.simulation.sample_period_s))
    }

    fn plan(&self, run_id: RunId) -> ReplicationPlan {
        ReplicationPlan {
            run_id,
            replications: self.replications,
            ic_uncertainty: self.ic(),
            seed: self.seed,
        }
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            seed: self.seed,
            ..self.noise
        }
    }

    /// Loads `params_file` (if any) into `params`.
    pub fn resolve(&mut self, base_dir: &Path) -> Result<()> {
        if let Some(file) = self.params_file.take() {
            let path = if file.is_absolute() { file } else { base_dir.join(file) };
            self.params = CraneParams::from_json_file(&path).map_err(|e| {
                Error::Config(format!("cannot load crane parameters from {}: {e}", path.display()))
            })?;
        }
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Everything computed for one run, before anything is stored.
#[derive(Debug, Clone)]
pub struct RunData {
    pub run_id: RunId,
    /// The input the twin was simulated with.
    pub trajectory: Trajectory,
    pub enactment: Enactment,
    pub replications: ReplicationSet,
    pub summaries: Vec<ReplicationSummary>,
    pub metrics: Vec<MetricResult>,
}

impl RunData {
    pub fn estimation_data(&self) -> EstimationData {
        EstimationData {
            run_id: self.run_id,
            trajectory: self.trajectory.clone(),
            measured: self.enactment.measured.clone(),
        }
    }
}

/// Plans the move with the twin, executes it on the plant, then replicates
/// and compares. Deterministic in `(cfg.seed, run_id)`.
pub fn execute_run(
    cfg: &ExecutionConfig,
    run_id: RunId,
    twin: &CraneParams,
    plant: &CraneParams,
    mv: Move,
    quantities: &[Quantity],
) -> Result<RunData> {
    let trajectory = generate_trajectory(run_id, mv.start_m, mv.end_m, twin, cfg.simulation.sample_period_s)?;
    let enactment = enact(&trajectory, plant, &cfg.noise(), &cfg.simulation)?;
    compare(cfg, run_id, trajectory, enactment, twin, quantities)
}

fn compare(
    cfg: &ExecutionConfig,
    run_id: RunId,
    trajectory: Trajectory,
    enactment: Enactment,
    twin: &CraneParams,
    quantities: &[Quantity],
) -> Result<RunData> {
    let initial = enactment.measured_initial_state()?;
    let replications = simulate_replications(&trajectory, twin, &initial, &cfg.plan(run_id), &cfg.simulation)?;
    let summaries = replications.summaries()?;
    let mut metrics = Vec::new();
    for &q in quantities {
        let summary = summaries
            .iter()
            .find(|s| s.quantity == q)
            .ok_or_else(|| Error::precondition(format!("{q} is not simulated")))?;
        let measured = resample(enactment.measured.require(q)?, &summary.times)?;
        metrics.extend(compute_all(summary, &measured, &cfg.metrics)?);
    }
    Ok(RunData {
        run_id,
        trajectory,
        enactment,
        replications,
        summaries,
        metrics,
    })
}

/// Rebuilds an experiment input from a logged velocity setpoint, for systems
/// that do not keep their planned trajectories. Trailing idle samples are
/// dropped; positions are the integrated setpoint starting at `start_m`.
pub fn trajectory_from_commanded(run_id: RunId, commanded: &Trace, start_m: f64) -> Result<Trajectory> {
    if commanded.is_empty() {
        return Err(Error::precondition("no commanded velocity was logged"));
    }
    let last_moving = commanded.values.iter().rposition(|v| *v != 0.0).unwrap_or(0);
    let n = (last_moving + 2).min(commanded.len());
    let mut samples = Vec::with_capacity(n);
    let mut x = start_m;
    for i in 0..n {
        if i > 0 {
            let dt = commanded.times[i] - commanded.times[i - 1];
            x += 0.5 * (commanded.values[i] + commanded.values[i - 1]) * dt;
        }
        samples.push(TrajectorySample {
            t_s: commanded.times[i],
            x_ref_m: x,
            v_cmd_mps: commanded.values[i],
        });
    }
    Trajectory::from_samples(run_id, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub machine: String,
    pub execution: ExecutionConfig,
    pub policy: VerdictPolicy,
    pub runs: usize,
    /// The first runs are known to be normal and set the thresholds. Ignored
    /// when `thresholds_file` is given.
    pub calibration_runs: usize,
    pub thresholds_file: Option<PathBuf>,
    pub faults: Vec<FaultWindow>,
    /// Moves cycled through run by run.
    pub moves: Vec<Move>,
    pub initial_guess: InitialGuessPolicy,
    pub optimizer: NelderMeadOptions,
    /// Re-derive each run's input from its logged commanded velocity.
    pub legacy: bool,
    /// Also store every replication's traces.
    pub persist_replications: bool,
    pub epoch_s: f64,
    pub run_spacing_s: f64,
    pub out: PathBuf,
    /// Store directory; defaults to `<out>/store`.
    pub store: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            machine: "gantry-1".into(),
            execution: ExecutionConfig::default(),
            policy: VerdictPolicy::AnyBreach,
            runs: 20,
            calibration_runs: 10,
            thresholds_file: None,
            faults: Vec::new(),
            moves: vec![Move::default(), Move { start_m: 0.6, end_m: 0.1 }],
            initial_guess: InitialGuessPolicy::FractionOfReference(0.9),
            optimizer: NelderMeadOptions::default(),
            legacy: false,
            persist_replications: true,
            epoch_s: 1_700_000_000.0,
            run_spacing_s: 60.0,
            out: PathBuf::from("out"),
            store: None,
        }
    }
}

impl ScenarioConfig {
    /// Reads a JSON config; relative paths inside it resolve against its directory.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.execution.resolve(base)?;
        if let Some(t) = cfg.thresholds_file.as_mut().filter(|t| t.is_relative()) {
            *t = base.join(&*t);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.execution.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("a scenario needs at least one run".into()));
        }
        if self.thresholds_file.is_none() && self.calibration_runs == 0 {
            return Err(Error::Config("calibration needs at least one normal run".into()));
        }
        if self.moves.is_empty() {
            return Err(Error::Config("at least one move is required".into()));
        }
        for m in &self.moves {
            let track = self.execution.params.track_length_m;
            if ![m.start_m, m.end_m].iter().all(|p| (0.0..=track).contains(p)) {
                return Err(Error::Config(format!("move {m:?} leaves the track")));
            }
        }
        let mut windows = self.faults.clone();
        windows.sort_by_key(|w| w.first_run);
        for w in &windows {
            if w.first_run == 0 || w.first_run > w.last_run {
                return Err(Error::Config(format!("fault window {}..={} is empty", w.first_run, w.last_run)));
            }
            w.fault.validate().map_err(as_config)?;
        }
        if windows.windows(2).any(|p| p[1].first_run <= p[0].last_run) {
            return Err(Error::Config("fault windows overlap".into()));
        }
        Ok(())
    }

    /// Fault on the 1-based run `index`.
    pub fn fault_for(&self, index: usize) -> FaultSpec {
        self.faults
            .iter()
            .find(|w| (w.first_run..=w.last_run).contains(&index))
            .map_or(FaultSpec::NONE, |w| w.fault)
    }

    pub fn store_dir(&self) -> PathBuf {
        match std::env::var_os(STORE_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.store.clone().unwrap_or_else(|| self.out.join("store")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub run_id: RunId,
    pub fault: FaultSpec,
    /// Twin top speed the run was planned and simulated with.
    pub twin_v_max_mps: f64,
    pub calibration: bool,
    pub verdict: Option<Verdict>,
    pub estimation: Option<EstimationResult>,
    /// Whether the estimate was applied to the twin for the following runs.
    pub twin_updated: bool,
    pub error: Option<String>,
}

/// Ordering record of one bus event; payloads and wall times are left out so
/// reports stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub topic: String,
    pub run_id: Option<RunId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub policy: VerdictPolicy,
    pub runs: Vec<RunSummary>,
    pub thresholds: Option<ThresholdTable>,
    pub final_params: CraneParams,
    pub events: Vec<EventRecord>,
}

impl ScenarioReport {
    pub fn exit_code(&self) -> i32 {
        if self.runs.iter().any(|r| r.error.is_some()) {
            exit::ABORTED
        } else if self
            .runs
            .iter()
            .any(|r| r.verdict.as_ref().is_some_and(|v| !v.is_valid()) && !r.twin_updated)
        {
            exit::INVALID
        } else {
            exit::SUCCESS
        }
    }
}

struct Loop<'a> {
    cfg: &'a ScenarioConfig,
    store: Store,
    bus: &'a EventBus,
    machine_id: u64,
    twin: CraneParams,
    thresholds: Option<ThresholdTable>,
}

/// Runs the scenario, storing every run, and returns its report. Errors in a
/// single run abort that run only; configuration and store errors abort all.
pub fn run_scenario(cfg: &ScenarioConfig, bus: &EventBus) -> Result<ScenarioReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut log = EventLog::subscribe(bus)?;
    let thresholds = match &cfg.thresholds_file {
        Some(path) => Some(ThresholdTable::from_json_file(path).map_err(as_config)?),
        None => None,
    };
    let mut store = Store::open(cfg.store_dir())?;
    let machine_id = store.ensure_machine(&cfg.machine)?;
    let mut lp = Loop {
        cfg,
        store,
        bus,
        machine_id,
        twin: cfg.execution.params,
        thresholds,
    };
    let mut runs: Vec<RunSummary> = Vec::with_capacity(cfg.runs);
    let mut pending: Vec<(usize, Vec<MetricResult>)> = Vec::new();
    for index in 1..=cfg.runs {
        let calibrating = lp.thresholds.is_none();
        let mut summary = RunSummary {
            index,
            run_id: lp.store.next_run_id(),
            fault: cfg.fault_for(index),
            twin_v_max_mps: lp.twin.v_max_mps,
            calibration: calibrating,
            verdict: None,
            estimation: None,
            twin_updated: false,
            error: None,
        };
        match lp.execute(index, &mut summary) {
            Ok(data) if calibrating => pending.push((runs.len(), data.metrics)),
            Ok(data) => {
                let fit = data.estimation_data();
                if let Err(e) = lp.judge(&mut summary, &data.metrics, Some(fit)) {
                    lp.abort(&mut summary, e)?;
                }
            }
            Err(e) => lp.abort(&mut summary, e)?,
        }
        runs.push(summary);
        if calibrating && (pending.len() == cfg.calibration_runs || (index == cfg.runs && !pending.is_empty())) {
            let all: Vec<MetricResult> = pending.iter().flat_map(|(_, m)| m.iter().copied()).collect();
            let table = calibrate_thresholds(&all, &Quantity::VALIDATED)?;
            table.to_json_file(cfg.out.join("thresholds.json"))?;
            lp.thresholds = Some(table);
            for (i, metrics) in std::mem::take(&mut pending) {
                let mut s = runs[i].clone();
                if let Err(e) = lp.judge(&mut s, &metrics, None) {
                    lp.abort(&mut s, e)?;
                }
                runs[i] = s;
            }
        }
        log.pump();
    }
    Ok(ScenarioReport {
        seed: cfg.execution.seed,
        policy: cfg.policy,
        runs,
        thresholds: lp.thresholds,
        final_params: lp.twin,
        events: log.records(),
    })
}

impl Loop<'_> {
    fn execute(&mut self, index: usize, summary: &mut RunSummary) -> Result<RunData> {
        let cfg = self.cfg;
        let exec = &cfg.execution;
        let mv = cfg.moves[(index - 1) % cfg.moves.len()];
        let start_time = cfg.epoch_s + (index - 1) as f64 * cfg.run_spacing_s;
        let run_id = self.store.new_run(self.machine_id, start_time, summary.fault)?;
        summary.run_id = run_id;
        let store = &mut self.store;

        let planned = generate_trajectory(run_id, mv.start_m, mv.end_m, &self.twin, exec.simulation.sample_period_s)?;
        let refs = planned.reference_traces();
        store.insert_trace(SeriesTable::Trajectory, refs.require(Quantity::Position)?, None)?;
        store.insert_trace(SeriesTable::Trajectory, refs.require(Quantity::Velocity)?, None)?;
        self.bus.publish(
            topics::TRAJECTORY_READY,
            json!({"run_id": run_id, "samples": planned.samples.len(), "v_max_used_mps": planned.v_max_used_mps}),
        )?;

        let plant = apply_fault(&exec.params, &summary.fault)?;
        let enactment = enact(&planned, &plant, &exec.noise(), &exec.simulation)?;
        for q in Quantity::STATE {
            store.insert_trace(SeriesTable::Measurement, enactment.measured.require(q)?, None)?;
        }
        store.insert_trace(SeriesTable::Measurement, &enactment.commanded, None)?;
        store.set_run_status(run_id, RunStatus::Enacted)?;
        self.bus.publish(topics::MEASURED_READY, json!({"run_id": run_id}))?;

        let input = if cfg.legacy {
            let commanded =
                store.query_traces(run_id, Quantity::CommandedVelocity, SeriesTable::Measurement, None)?;
            let start = store.query_traces(run_id, Quantity::Position, SeriesTable::Measurement, None)?;
            trajectory_from_commanded(run_id, &commanded, start.values[0])?
        } else {
            planned
        };
        let data = compare(exec, run_id, input, enactment, &self.twin, &Quantity::VALIDATED)?;
        store.insert_simulation(run_id, exec.replications as u32)?;
        if cfg.persist_replications {
            for (r, traces) in data.replications.runs.iter().enumerate() {
                for q in Quantity::STATE {
                    store.insert_trace(SeriesTable::SimulationDatapoint, traces.require(q)?, Some(r as u32))?;
                }
            }
        }
        store.set_run_status(run_id, RunStatus::Simulated)?;
        self.bus.publish(
            topics::SIMULATION_COMPLETED,
            json!({"run_id": run_id, "replications": exec.replications}),
        )?;
        for m in &data.metrics {
            store.insert_metric(m)?;
        }
        Ok(data)
    }

    /// Compares against the thresholds and, for an invalid run with data to
    /// fit, re-estimates the twin's top speed.
    fn judge(&mut self, summary: &mut RunSummary, metrics: &[MetricResult], data: Option<EstimationData>) -> Result<()> {
        let cfg = self.cfg;
        let table = self
            .thresholds
            .as_ref()
            .ok_or_else(|| Error::precondition("thresholds are not calibrated yet"))?;
        let mut verdict = evaluate(metrics, table, cfg.policy)?;
        let mut update = None;
        if let (false, Some(data)) = (verdict.is_valid(), data) {
            let problem = EstimationProblem::v_max(&data, cfg.initial_guess)?;
            let result = estimate_parameters(
                &data,
                &self.twin,
                &problem,
                cfg.initial_guess,
                &cfg.optimizer,
                &cfg.execution.simulation,
                None,
            )?;
            // A run that never reached its planned speed only bounds the top
            // speed from below; any value on that plateau fits equally well.
            let on_plateau = result
                .value(ParamName::VMax)
                .is_some_and(|v| v >= data.trajectory.peak_speed() * (1.0 - PLATEAU_TOLERANCE));
            if !result.converged || result.proposed.validate().is_err() {
                verdict.status = VerdictStatus::NeedsModelRevision;
            } else if !on_plateau {
                update = Some(result.clone());
            }
            summary.estimation = Some(result);
        }
        self.bus.publish(
            topics::VERDICT,
            json!({
                "run_id": summary.run_id,
                "status": verdict.status,
                "breaches": verdict.breaches.len(),
                "evaluated": verdict.evaluated,
            }),
        )?;
        summary.verdict = Some(verdict);
        match update {
            Some(result) => {
                crate::estimation::publish_update(self.bus, &result)?;
                self.twin = result.proposed;
                summary.twin_updated = true;
                self.store.set_run_status(summary.run_id, RunStatus::Recalibrated)
            }
            None => self.store.set_run_status(summary.run_id, RunStatus::Validated),
        }
    }

    fn abort(&mut self, summary: &mut RunSummary, error: Error) -> Result<()> {
        if matches!(error, Error::Io(_) | Error::Locked(_)) {
            return Err(error);
        }
        summary.error = Some(error.to_string());
        if self.store.run(summary.run_id).is_ok() {
            self.store.set_run_status(summary.run_id, RunStatus::Aborted)?;
        }
        Ok(())
    }
}

/// Collects the ordering of loop events as they are published.
struct EventLog {
    subscriptions: Vec<Subscription>,
    records: Vec<EventRecord>,
}

impl EventLog {
    fn subscribe(bus: &EventBus) -> Result<Self> {
        Ok(EventLog {
            subscriptions: vec![bus.subscribe("run.*")?, bus.subscribe("twin.*")?],
            records: Vec::new(),
        })
    }

    fn pump(&mut self) {
        for sub in &self.subscriptions {
            self.records.extend(sub.drain().into_iter().map(|e| EventRecord {
                seq: e.seq,
                run_id: e.payload.get("run_id").and_then(|v| v.as_u64()).map(RunId),
                topic: e.topic,
            }));
        }
        self.records.sort_by_key(|r| r.seq);
    }

    fn records(mut self) -> Vec<EventRecord> {
        self.pump();
        self.records
    }
}
