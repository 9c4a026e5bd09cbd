//! The full loop: calibrate, watch, detect a slower plant, re-estimate the
//! twin, and carry on. Writes its store and reports under a temp directory
//! unless a directory is given.
//!
//! cargo run --release --example closed_loop -- [out_dir]

use std::path::PathBuf;

use twinwatch::bus::EventBus;
use twinwatch::scenario::{run_scenario, write_scenario_report, FaultWindow, ScenarioConfig};
use twinwatch::validator::VerdictPolicy;
use twinwatch::FaultSpec;

fn main() -> twinwatch::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("twinwatch-loop-{}", std::process::id())));
    let mut cfg = ScenarioConfig {
        runs: 16,
        policy: VerdictPolicy::MajorityVote,
        faults: vec![FaultWindow { first_run: 11, last_run: 16, fault: FaultSpec::velocity_deficit(0.10) }],
        out: out.clone(),
        ..ScenarioConfig::default()
    };
    cfg.execution.seed = 1;

    let report = run_scenario(&cfg, &EventBus::new())?;
    for r in &report.runs {
        let verdict = r.verdict.as_ref().map_or("-".to_string(), |v| format!("{:?}", v.status));
        let update = if r.twin_updated { "  twin updated" } else { "" };
        println!(
            "run {:>2}  fault {:<16} twin v_max {:.5}  {verdict}{update}",
            r.index,
            format!("{}:{}", r.fault.kind.name(), r.fault.delta_fraction),
            r.twin_v_max_mps
        );
    }
    for path in write_scenario_report(&report, &out)? {
        println!("wrote {}", path.display());
    }
    println!("exit code would be {}", report.exit_code());
    Ok(())
}
