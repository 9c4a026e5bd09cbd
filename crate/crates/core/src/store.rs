//! File-backed time-series store using a narrow table layout: every data row
//! holds its keys, a run-relative time and one value.
//!
//! A store is a directory with one CSV file per table and an `index.json` of
//! key counters. One writer at a time holds `store.lock`; readers may open the
//! directory concurrently and only ever see complete rows, since each batch is
//! appended with a single write and a trailing partial line is ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricResult};
use crate::plant::{FaultKind, FaultSpec};
use crate::trace::{Quantity, RunId, Trace, TraceKind};

pub const TABLES: [&str; 13] = [
    "machine",
    "quantity",
    "run",
    "trajectory",
    "measurement",
    "simulation",
    "simulationdatapoint",
    "metric_rmse",
    "metric_ned_local",
    "metric_ned_global",
    "metric_avg_rel_err",
    "metric_max_rel_err",
    "metric_reliability",
];

const LOCK_FILE: &str = "store.lock";
const INDEX_FILE: &str = "index.json";

fn header(table: &str) -> &'static [&'static str] {
    match table {
        "machine" => &["machine_id", "name"],
        "quantity" => &["quantity_id", "name", "unit", "symbol"],
        "run" => &["run_id", "machine_id", "start_time", "fault_kind", "fault_delta", "status"],
        "trajectory" | "measurement" => &["run_id", "machine_id", "quantity_id", "t_s", "value"],
        "simulation" => &["run_id", "machine_id", "replications"],
        "simulationdatapoint" => &["run_id", "machine_id", "quantity_id", "replication", "t_s", "value"],
        "metric_reliability" => &["run_id", "machine_id", "quantity_id", "value"],
        _ => &["run_id", "machine_id", "quantity_id", "value", "included", "excluded"],
    }
}

/// Table that stores the given metric.
pub fn metric_table(metric: Metric) -> &'static str {
    match metric {
        Metric::Rmse => "metric_rmse",
        Metric::MeanNed => "metric_ned_local",
        Metric::TotalNed => "metric_ned_global",
        Metric::AvgRelErr => "metric_avg_rel_err",
        Metric::MaxRelErr => "metric_max_rel_err",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Planned,
    Enacted,
    Simulated,
    Validated,
    Recalibrated,
    Aborted,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Planned => "planned",
            RunStatus::Enacted => "enacted",
            RunStatus::Simulated => "simulated",
            RunStatus::Validated => "validated",
            RunStatus::Recalibrated => "recalibrated",
            RunStatus::Aborted => "aborted",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            RunStatus::Planned,
            RunStatus::Enacted,
            RunStatus::Simulated,
            RunStatus::Validated,
            RunStatus::Recalibrated,
            RunStatus::Aborted,
        ]
        .into_iter()
        .find(|r| r.name() == s)
    }
}

/// One routine operation of a machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: RunId,
    pub machine_id: u64,
    /// Absolute start, seconds since the Unix epoch. All samples of the run
    /// are stored relative to it.
    pub start_time: f64,
    pub fault: FaultSpec,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesTable {
    Trajectory,
    Measurement,
    SimulationDatapoint,
}

impl SeriesTable {
    pub fn name(self) -> &'static str {
        match self {
            SeriesTable::Trajectory => "trajectory",
            SeriesTable::Measurement => "measurement",
            SeriesTable::SimulationDatapoint => "simulationdatapoint",
        }
    }

    fn trace_kind(self) -> TraceKind {
        match self {
            SeriesTable::Trajectory => TraceKind::Reference,
            SeriesTable::Measurement => TraceKind::Measured,
            SeriesTable::SimulationDatapoint => TraceKind::Simulated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct SeriesKey {
    run_id: RunId,
    quantity: Quantity,
    replication: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    format_version: u32,
    next_machine_id: u64,
    next_run_id: u64,
}

impl Default for Index {
    fn default() -> Self {
        Index {
            format_version: 1,
            next_machine_id: 1,
            next_run_id: 1,
        }
    }
}

struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn num(v: f64) -> String {
    // Display prints the shortest string that parses back to the same bits.
    v.to_string()
}

fn parse<T: std::str::FromStr>(table: &str, field: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Integrity(format!("{table}: cannot parse {field} `{s}`")))
}

/// Reads a table's rows, skipping the header and any unterminated last line.
fn read_rows(dir: &Path, table: &str) -> Result<Vec<csv::StringRecord>> {
    let path = dir.join(format!("{table}.csv"));
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(complete.as_bytes());
    let expected = header(table);
    if !complete.is_empty() && reader.headers()?.iter().ne(expected.iter().copied()) {
        return Err(Error::Integrity(format!("{table}: unexpected header")));
    }
    Ok(reader.records().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Handle on a store directory.
pub struct Store {
    dir: PathBuf,
    lock: Option<Lock>,
    index: Index,
    machines: BTreeMap<u64, String>,
    runs: BTreeMap<RunId, RunRecord>,
    simulations: BTreeMap<RunId, u32>,
    series: HashMap<SeriesTable, HashMap<SeriesKey, Vec<(f64, f64)>>>,
    metrics: BTreeMap<(RunId, Quantity, Metric), MetricResult>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .field("writable", &self.lock.is_some())
            .field("runs", &self.runs.len())
            .finish()
    }
}

impl Store {
    /// Opens `dir` for writing, creating the directory and tables if needed.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let lock_path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock_path) {
            Ok(mut f) => writeln!(f, "{}", std::process::id())?,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(dir)),
            Err(e) => return Err(e.into()),
        }
        let lock = Lock(lock_path);
        let fresh = !dir.join(INDEX_FILE).exists();
        for table in TABLES {
            let path = dir.join(format!("{table}.csv"));
            if !path.exists() {
                fs::write(&path, header(table).join(",") + "\n")?;
            }
        }
        let store = Self::load(dir, Some(lock))?;
        if fresh {
            store.write_index()?;
            let rows: Vec<Vec<String>> = Quantity::ALL
                .into_iter()
                .map(|q| vec![q.id().to_string(), q.name().into(), q.unit().into(), q.symbol().into()])
                .collect();
            store.append("quantity", &rows)?;
        }
        Ok(store)
    }

    /// Opens an existing store without taking the writer lock.
    pub fn open_read_only(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.join(INDEX_FILE).exists() {
            return Err(Error::NotFound(format!("no store at {}", dir.display())));
        }
        Self::load(dir, None)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn load(dir: PathBuf, lock: Option<Lock>) -> Result<Self> {
        let index = match fs::read_to_string(dir.join(INDEX_FILE)) {
            Ok(t) => serde_json::from_str(&t)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(e.into()),
        };
        let mut store = Store {
            dir,
            lock,
            index,
            machines: BTreeMap::new(),
            runs: BTreeMap::new(),
            simulations: BTreeMap::new(),
            series: HashMap::new(),
            metrics: BTreeMap::new(),
        };
        for row in read_rows(&store.dir, "machine")? {
            store.machines.insert(parse("machine", "machine_id", &row[0])?, row[1].to_owned());
        }
        for row in read_rows(&store.dir, "run")? {
            let rec = parse_run(&row)?;
            // Status updates rewrite the file, so the last row wins.
            store.runs.insert(rec.run_id, rec);
        }
        for row in read_rows(&store.dir, "simulation")? {
            store
                .simulations
                .insert(RunId(parse("simulation", "run_id", &row[0])?), parse("simulation", "replications", &row[2])?);
        }
        for table in [SeriesTable::Trajectory, SeriesTable::Measurement, SeriesTable::SimulationDatapoint] {
            let map = store.series.entry(table).or_default();
            let with_rep = table == SeriesTable::SimulationDatapoint;
            for row in read_rows(&store.dir, table.name())? {
                let (key, t, v) = parse_series_row(table.name(), &row, with_rep)?;
                map.entry(key).or_default().push((t, v));
            }
            for samples in map.values_mut() {
                samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
        for metric in Metric::ALL {
            let table = metric_table(metric);
            for row in read_rows(&store.dir, table)? {
                let run_id = RunId(parse(table, "run_id", &row[0])?);
                let quantity = quantity_of(table, &row[2])?;
                store.metrics.insert(
                    (run_id, quantity, metric),
                    MetricResult {
                        run_id,
                        quantity,
                        metric,
                        value: parse(table, "value", &row[3])?,
                        included: parse(table, "included", &row[4])?,
                        excluded: parse(table, "excluded", &row[5])?,
                    },
                );
            }
        }
        Ok(store)
    }

    fn writable(&self) -> Result<()> {
        if self.lock.is_none() {
            return Err(Error::precondition("store was opened read-only"));
        }
        Ok(())
    }

    fn write_index(&self) -> Result<()> {
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&self.index)? + "\n")?;
        fs::rename(&tmp, self.dir.join(INDEX_FILE))?;
        Ok(())
    }

    fn append(&self, table: &str, rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut f = OpenOptions::new().append(true).open(self.dir.join(format!("{table}.csv")))?;
        f.write_all(&bytes)?;
        Ok(())
    }

    fn rewrite_runs(&self) -> Result<()> {
        let tmp = self.dir.join("run.csv.tmp");
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(File::create(&tmp)?);
        w.write_record(header("run"))?;
        for r in self.runs.values() {
            w.write_record(run_row(r))?;
        }
        w.flush()?;
        drop(w);
        fs::rename(&tmp, self.dir.join("run.csv"))?;
        Ok(())
    }

    pub fn insert_machine(&mut self, name: &str) -> Result<u64> {
        self.writable()?;
        let id = self.index.next_machine_id;
        self.append("machine", &[vec![id.to_string(), name.to_owned()]])?;
        self.machines.insert(id, name.to_owned());
        self.index.next_machine_id += 1;
        self.write_index()?;
        Ok(id)
    }

    /// Returns the id of the machine called `name`, creating it if needed.
    pub fn ensure_machine(&mut self, name: &str) -> Result<u64> {
        match self.machines.iter().find(|(_, n)| n.as_str() == name) {
            Some((id, _)) => Ok(*id),
            None => self.insert_machine(name),
        }
    }

    pub fn machines(&self) -> &BTreeMap<u64, String> {
        &self.machines
    }

    /// The id the next [`Store::new_run`] will hand out.
    pub fn next_run_id(&self) -> RunId {
        RunId(self.index.next_run_id)
    }

    /// Registers a run under a fresh id.
    pub fn new_run(&mut self, machine_id: u64, start_time: f64, fault: FaultSpec) -> Result<RunId> {
        self.insert_run(RunRecord {
            run_id: self.next_run_id(),
            machine_id,
            start_time,
            fault,
            status: RunStatus::Planned,
        })
    }

    pub fn insert_run(&mut self, record: RunRecord) -> Result<RunId> {
        self.writable()?;
        if self.runs.contains_key(&record.run_id) {
            return Err(Error::Integrity(format!("run {} already exists", record.run_id)));
        }
        if !self.machines.contains_key(&record.machine_id) {
            return Err(Error::ForeignKey(format!("machine {} does not exist", record.machine_id)));
        }
        self.append("run", &[run_row(&record)])?;
        self.runs.insert(record.run_id, record);
        self.index.next_run_id = self.index.next_run_id.max(record.run_id.0 + 1);
        self.write_index()?;
        Ok(record.run_id)
    }

    pub fn set_run_status(&mut self, run_id: RunId, status: RunStatus) -> Result<()> {
        self.writable()?;
        let rec = self
            .runs
            .get_mut(&run_id)
            .ok_or_else(|| Error::NotFound(format!("run {run_id}")))?;
        rec.status = status;
        self.rewrite_runs()
    }

    pub fn run(&self, run_id: RunId) -> Result<&RunRecord> {
        self.runs.get(&run_id).ok_or_else(|| Error::NotFound(format!("run {run_id}")))
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.values()
    }

    pub fn insert_simulation(&mut self, run_id: RunId, replications: u32) -> Result<()> {
        self.writable()?;
        let machine = self.run(run_id)?.machine_id;
        if self.simulations.contains_key(&run_id) {
            return Err(Error::Integrity(format!("simulation for run {run_id} already exists")));
        }
        self.append(
            "simulation",
            &[vec![run_id.to_string(), machine.to_string(), replications.to_string()]],
        )?;
        self.simulations.insert(run_id, replications);
        Ok(())
    }

    pub fn simulation_replications(&self, run_id: RunId) -> Option<u32> {
        self.simulations.get(&run_id).copied()
    }

    /// Appends one series. The batch is all-or-nothing: key or time clashes
    /// reject it before anything is written.
    pub fn insert_series(
        &mut self,
        table: SeriesTable,
        run_id: RunId,
        quantity: Quantity,
        replication: Option<u32>,
        samples: &[(f64, f64)],
    ) -> Result<usize> {
        self.writable()?;
        let machine = self.run(run_id)?.machine_id;
        match (table, replication) {
            (SeriesTable::SimulationDatapoint, None) => {
                return Err(Error::precondition("simulation data points need a replication index"))
            }
            (SeriesTable::SimulationDatapoint, Some(r)) => {
                let count = self
                    .simulations
                    .get(&run_id)
                    .ok_or_else(|| Error::ForeignKey(format!("no simulation entry for run {run_id}")))?;
                if r >= *count {
                    return Err(Error::ForeignKey(format!("replication {r} beyond the {count} simulated")));
                }
            }
            (_, Some(_)) => return Err(Error::precondition("only simulation data points carry a replication")),
            (_, None) => {}
        }
        if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::domain("samples must be finite"));
        }
        let key = SeriesKey {
            run_id,
            quantity,
            replication,
        };
        let existing = self.series.get(&table).and_then(|m| m.get(&key));
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        for (t, _) in samples {
            let clash = !seen.insert(t.to_bits())
                || existing.is_some_and(|s| s.binary_search_by(|(x, _)| x.total_cmp(t)).is_ok());
            if clash {
                return Err(Error::Integrity(format!(
                    "{}: duplicate sample at t = {t} for run {run_id}, {quantity}",
                    table.name()
                )));
            }
        }
        let rows: Vec<Vec<String>> = samples
            .iter()
            .map(|(t, v)| {
                let mut row = vec![run_id.to_string(), machine.to_string(), quantity.id().to_string()];
                if let Some(r) = replication {
                    row.push(r.to_string());
                }
                row.push(num(*t));
                row.push(num(*v));
                row
            })
            .collect();
        self.append(table.name(), &rows)?;
        let stored = self.series.entry(table).or_default().entry(key).or_default();
        stored.extend_from_slice(samples);
        stored.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(samples.len())
    }

    pub fn insert_trace(&mut self, table: SeriesTable, trace: &Trace, replication: Option<u32>) -> Result<usize> {
        let samples: Vec<(f64, f64)> = trace.samples().collect();
        self.insert_series(table, trace.run_id, trace.quantity, replication, &samples)
    }

    /// Samples of one series ordered by time; empty when nothing was stored.
    pub fn query_traces(
        &self,
        run_id: RunId,
        quantity: Quantity,
        table: SeriesTable,
        replication: Option<u32>,
    ) -> Result<Trace> {
        self.run(run_id)?;
        let key = SeriesKey {
            run_id,
            quantity,
            replication,
        };
        let samples = self
            .series
            .get(&table)
            .and_then(|m| m.get(&key))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        Ok(Trace {
            run_id,
            quantity,
            kind: table.trace_kind(),
            times: samples.iter().map(|s| s.0).collect(),
            values: samples.iter().map(|s| s.1).collect(),
        })
    }

    /// Every stored replication of a quantity, in replication order.
    pub fn query_replications(&self, run_id: RunId, quantity: Quantity) -> Result<Vec<Trace>> {
        let count = self.simulation_replications(run_id).unwrap_or(0);
        (0..count)
            .map(|r| self.query_traces(run_id, quantity, SeriesTable::SimulationDatapoint, Some(r)))
            .filter(|t| t.as_ref().map_or(true, |t| !t.is_empty()))
            .collect()
    }

    pub fn insert_metric(&mut self, result: &MetricResult) -> Result<()> {
        self.writable()?;
        let machine = self.run(result.run_id)?.machine_id;
        if !(result.value.is_finite() && result.value >= 0.0) {
            return Err(Error::domain(format!("metric value {} cannot be stored", result.value)));
        }
        let key = (result.run_id, result.quantity, result.metric);
        if self.metrics.contains_key(&key) {
            return Err(Error::Integrity(format!(
                "{} for run {} on {} already stored",
                result.metric, result.run_id, result.quantity
            )));
        }
        self.append(
            metric_table(result.metric),
            &[vec![
                result.run_id.to_string(),
                machine.to_string(),
                result.quantity.id().to_string(),
                num(result.value),
                result.included.to_string(),
                result.excluded.to_string(),
            ]],
        )?;
        self.metrics.insert(key, *result);
        Ok(())
    }

    pub fn query_metrics(&self, run_id: RunId) -> Result<Vec<MetricResult>> {
        self.run(run_id)?;
        Ok(self
            .metrics
            .range((run_id, Quantity::Position, Metric::Rmse)..)
            .take_while(|(k, _)| k.0 == run_id)
            .map(|(_, v)| *v)
            .collect())
    }

    /// Re-reads every table from disk and checks keys, references and the
    /// run-relative time convention.
    pub fn check_integrity(dir: impl AsRef<Path>) -> Result<IntegrityReport> {
        let dir = dir.as_ref();
        let mut report = IntegrityReport::default();
        let machines: BTreeSet<u64> = read_rows(dir, "machine")?
            .iter()
            .map(|r| parse("machine", "machine_id", &r[0]))
            .collect::<Result<_>>()?;
        let quantities: BTreeSet<u32> = read_rows(dir, "quantity")?
            .iter()
            .map(|r| parse("quantity", "quantity_id", &r[0]))
            .collect::<Result<_>>()?;
        let mut runs: BTreeMap<RunId, u64> = BTreeMap::new();
        for row in read_rows(dir, "run")? {
            let rec = parse_run(&row)?;
            if !machines.contains(&rec.machine_id) {
                return Err(Error::ForeignKey(format!("run {} references machine {}", rec.run_id, rec.machine_id)));
            }
            if runs.insert(rec.run_id, rec.machine_id).is_some() {
                return Err(Error::Integrity(format!("run {} appears twice", rec.run_id)));
            }
        }
        report.runs = runs.len();
        let check_ref = |table: &str, run: RunId, machine: u64, quantity: Option<u32>| -> Result<()> {
            match runs.get(&run) {
                Some(&m) if m == machine => {}
                _ => return Err(Error::ForeignKey(format!("{table}: run {run} / machine {machine} unknown"))),
            }
            if let Some(q) = quantity {
                if !quantities.contains(&q) {
                    return Err(Error::ForeignKey(format!("{table}: quantity {q} unknown")));
                }
            }
            Ok(())
        };
        let mut sims: BTreeMap<RunId, u32> = BTreeMap::new();
        for row in read_rows(dir, "simulation")? {
            let run = RunId(parse("simulation", "run_id", &row[0])?);
            check_ref("simulation", run, parse("simulation", "machine_id", &row[1])?, None)?;
            if sims.insert(run, parse("simulation", "replications", &row[2])?).is_some() {
                return Err(Error::Integrity(format!("simulation for run {run} appears twice")));
            }
        }
        let mut first_trajectory_t: BTreeMap<RunId, f64> = BTreeMap::new();
        for table in ["trajectory", "measurement", "simulationdatapoint"] {
            let with_rep = table == "simulationdatapoint";
            let mut keys: BTreeSet<(RunId, u32, Option<u32>, u64)> = BTreeSet::new();
            for row in read_rows(dir, table)? {
                let (key, t, _) = parse_series_row(table, &row, with_rep)?;
                check_ref(table, key.run_id, parse(table, "machine_id", &row[1])?, Some(key.quantity.id()))?;
                if let Some(r) = key.replication {
                    if r >= sims.get(&key.run_id).copied().unwrap_or(0) {
                        return Err(Error::ForeignKey(format!("{table}: replication {r} of run {} unknown", key.run_id)));
                    }
                }
                if !keys.insert((key.run_id, key.quantity.id(), key.replication, t.to_bits())) {
                    return Err(Error::Integrity(format!("{table}: duplicate key at t = {t}")));
                }
                if table == "trajectory" {
                    let first = first_trajectory_t.entry(key.run_id).or_insert(t);
                    *first = first.min(t);
                }
                report.data_rows += 1;
            }
        }
        if let Some((run, t)) = first_trajectory_t.iter().find(|(_, t)| **t != 0.0) {
            return Err(Error::Integrity(format!("trajectory of run {run} starts at t = {t}, not 0")));
        }
        for metric in Metric::ALL {
            let table = metric_table(metric);
            let mut keys = BTreeSet::new();
            for row in read_rows(dir, table)? {
                let run = RunId(parse(table, "run_id", &row[0])?);
                let q: u32 = parse(table, "quantity_id", &row[2])?;
                check_ref(table, run, parse(table, "machine_id", &row[1])?, Some(q))?;
                if !keys.insert((run, q)) {
                    return Err(Error::Integrity(format!("{table}: duplicate row for run {run}")));
                }
                report.metric_rows += 1;
            }
        }
        if !read_rows(dir, "metric_reliability")?.is_empty() {
            report.reliability_rows = read_rows(dir, "metric_reliability")?.len();
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IntegrityReport {
    pub runs: usize,
    pub data_rows: usize,
    pub metric_rows: usize,
    pub reliability_rows: usize,
}

fn run_row(r: &RunRecord) -> Vec<String> {
    vec![
        r.run_id.to_string(),
        r.machine_id.to_string(),
        num(r.start_time),
        r.fault.kind.name().to_owned(),
        num(r.fault.delta_fraction),
        r.status.name().to_owned(),
    ]
}

fn parse_run(row: &csv::StringRecord) -> Result<RunRecord> {
    let kind = FaultKind::from_name(&row[3]).ok_or_else(|| Error::Integrity(format!("run: fault kind `{}`", &row[3])))?;
    Ok(RunRecord {
        run_id: RunId(parse("run", "run_id", &row[0])?),
        machine_id: parse("run", "machine_id", &row[1])?,
        start_time: parse("run", "start_time", &row[2])?,
        fault: FaultSpec {
            kind,
            delta_fraction: parse("run", "fault_delta", &row[4])?,
        },
        status: RunStatus::parse(&row[5]).ok_or_else(|| Error::Integrity(format!("run: status `{}`", &row[5])))?,
    })
}

fn quantity_of(table: &str, s: &str) -> Result<Quantity> {
    let id: u32 = parse(table, "quantity_id", s)?;
    Quantity::from_id(id).ok_or_else(|| Error::ForeignKey(format!("{table}: quantity {id} unknown")))
}

fn parse_series_row(table: &str, row: &csv::StringRecord, with_rep: bool) -> Result<(SeriesKey, f64, f64)> {
    let run_id = RunId(parse(table, "run_id", &row[0])?);
    let quantity = quantity_of(table, &row[2])?;
    let (replication, rest) = if with_rep {
        (Some(parse(table, "replication", &row[3])?), 4)
    } else {
        (None, 3)
    };
    Ok((
        SeriesKey {
            run_id,
            quantity,
            replication,
        },
        parse(table, "t_s", &row[rest])?,
        parse(table, "value", &row[rest + 1])?,
    ))
}
