//! Cutting a continuous signal into validation experiments, by fixed time
//! windows and by events.
//!
//! cargo run --example experiment_windows

use twinwatch::trajectory::{enact, generate_trajectory, NoiseSpec};
use twinwatch::validator::{delimit, EventPredicate, ExperimentStream, ExperimentWindow, Segment};
use twinwatch::{CraneParams, Quantity, RunId, SimulationOptions};

fn main() -> twinwatch::Result<()> {
    let params = CraneParams::default();
    let opts = SimulationOptions::default();
    let traj = generate_trajectory(RunId(1), 0.1, 0.6, &params, opts.sample_period_s)?;
    let enactment = enact(&traj, &params, &NoiseSpec::silent(), &opts)?;
    let theta = enactment.truth.require(Quantity::AngularPosition)?;

    for window in [
        ExperimentWindow::PerRun,
        ExperimentWindow::TimeBased { duration_s: 1.0 },
        ExperimentWindow::EventBased { predicate: EventPredicate::CrossesZeroUpward },
    ] {
        let segments = delimit(ExperimentStream::Samples(theta), &window)?;
        println!("{window:?}: {} experiments", segments.len());
        for s in segments.iter().take(4) {
            match s {
                Segment::Run(id) => println!("  run {id}"),
                Segment::Window { t_start, t_end, start, end } => {
                    println!("  [{t_start:.2}, {t_end:.2}) s, samples {start}..{end}")
                }
            }
        }
    }
    Ok(())
}
