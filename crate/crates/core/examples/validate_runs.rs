//! Calibrates thresholds on normal runs, then judges a few runs on a plant
//! whose top speed has dropped.
//!
//! cargo run --release --example validate_runs -- [deficit]

use twinwatch::plant::apply_fault;
use twinwatch::scenario::{execute_run, ExecutionConfig, Move};
use twinwatch::validator::{calibrate_thresholds, evaluate, VerdictPolicy};
use twinwatch::{FaultSpec, Quantity, RunId};

fn main() -> twinwatch::Result<()> {
    let deficit: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.10);
    let cfg = ExecutionConfig { seed: 3, ..ExecutionConfig::default() };
    let twin = cfg.params;
    let mv = Move::default();

    let mut normal = Vec::new();
    for id in 1..=10 {
        normal.extend(execute_run(&cfg, RunId(id), &twin, &twin, mv, &Quantity::VALIDATED)?.metrics);
    }
    let table = calibrate_thresholds(&normal, &Quantity::VALIDATED)?;
    for (metric, quantity) in table.entries.keys() {
        println!("threshold {:>12} {:<16} {:.6}", metric.name(), quantity.name(), table.entries[&(*metric, *quantity)]);
    }

    let plant = apply_fault(&twin, &FaultSpec::velocity_deficit(deficit))?;
    for id in 11..=15 {
        let run = execute_run(&cfg, RunId(id), &twin, &plant, mv, &Quantity::VALIDATED)?;
        for policy in [VerdictPolicy::AnyBreach, VerdictPolicy::MajorityVote] {
            let v = evaluate(&run.metrics, &table, policy)?;
            println!("run {id} {policy:?}: {:?} ({} of {} breached)", v.status, v.breaches.len(), v.evaluated);
        }
    }
    Ok(())
}
