//! Writes one run into the CSV store, reads it back from disk, and checks
//! the files for dangling references.
//!
//! cargo run --example store_roundtrip -- [store_dir]

use std::path::PathBuf;

use twinwatch::scenario::{execute_run, ExecutionConfig, Move};
use twinwatch::store::{RunStatus, SeriesTable, Store};
use twinwatch::{FaultSpec, Quantity};

fn main() -> twinwatch::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("twinwatch-store-{}", std::process::id())));
    let cfg = ExecutionConfig { replications: 5, seed: 2, ..ExecutionConfig::default() };

    let run_id = {
        let mut store = Store::open(&dir)?;
        let machine = store.ensure_machine("gantry-1")?;
        let run_id = store.new_run(machine, 1_700_000_000.0, FaultSpec::NONE)?;
        let run = execute_run(&cfg, run_id, &cfg.params, &cfg.params, Move::default(), &Quantity::VALIDATED)?;
        for trace in &run.trajectory.reference_traces().traces {
            store.insert_trace(SeriesTable::Trajectory, trace, None)?;
        }
        for trace in &run.enactment.measured.traces {
            store.insert_trace(SeriesTable::Measurement, trace, None)?;
        }
        store.insert_simulation(run_id, cfg.replications as u32)?;
        for (r, set) in run.replications.runs.iter().enumerate() {
            for trace in &set.traces {
                store.insert_trace(SeriesTable::SimulationDatapoint, trace, Some(r as u32))?;
            }
        }
        for m in &run.metrics {
            store.insert_metric(m)?;
        }
        store.set_run_status(run_id, RunStatus::Simulated)?;
        run_id
    };

    let store = Store::open_read_only(&dir)?;
    let rec = store.run(run_id)?;
    println!("run {} on machine {} is {}", rec.run_id, rec.machine_id, rec.status.name());
    let theta = store.query_traces(run_id, Quantity::AngularPosition, SeriesTable::Measurement, None)?;
    println!("measured swing angle: {} samples, last t = {:.2} s", theta.len(), theta.times.last().unwrap_or(&0.0));
    println!("{} replications of velocity stored", store.query_replications(run_id, Quantity::Velocity)?.len());
    for m in store.query_metrics(run_id)? {
        println!("  {:<12} {:<16} {:.6}", m.metric.name(), m.quantity.name(), m.value);
    }
    let report = Store::check_integrity(&dir)?;
    println!("integrity ok: {report:?}");
    println!("store at {}", dir.display());
    Ok(())
}
