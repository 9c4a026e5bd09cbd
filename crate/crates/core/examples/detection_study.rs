//! A reduced top-speed detection sweep: how often each metric flags runs as
//! the plant gets slower.
//!
//! cargo run --release --example detection_study -- [runs_per_delta]

use twinwatch::metrics::Metric;
use twinwatch::scenario::{study_detection, StudyConfig};

fn main() -> twinwatch::Result<()> {
    let runs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let mut cfg = StudyConfig::default();
    cfg.execution.seed = 1;
    cfg.execution.replications = 15;
    cfg.detection.normal_runs = 10;
    cfg.detection.runs_per_delta = runs;
    cfg.store = Some(std::env::temp_dir().join(format!("twinwatch-detect-{}", std::process::id())));

    let report = study_detection(&cfg)?;
    let deltas = std::iter::once(0.0).chain(cfg.detection.deltas.iter().copied());
    print!("{:<12} {:<16}", "metric", "quantity");
    let deltas: Vec<f64> = deltas.collect();
    for d in &deltas {
        print!(" {:>6}", format!("{:.0}%", d * 100.0));
    }
    println!();
    for q in &cfg.detection.quantities {
        for m in Metric::ALL {
            print!("{:<12} {:<16}", m.name(), q.name());
            for &d in &deltas {
                let cell = report.row(d, m, *q).map_or("-".into(), |r| format!("{}/{}", r.breaches, r.runs));
                print!(" {cell:>6}");
            }
            println!();
        }
    }
    Ok(())
}
