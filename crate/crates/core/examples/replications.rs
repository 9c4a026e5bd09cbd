//! Replicates the twin from an uncertain initial state and prints the band
//! of predicted swing angle around the single measured run.
//!
//! cargo run --example replications -- [replications]

use twinwatch::replication::{simulate_replications, IcUncertainty, ReplicationPlan};
use twinwatch::trajectory::{enact, generate_trajectory, NoiseSpec};
use twinwatch::{CraneParams, Quantity, RunId, SimulationOptions};

fn main() -> twinwatch::Result<()> {
    let replications: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    let params = CraneParams::default();
    let opts = SimulationOptions::default();
    let noise = NoiseSpec { seed: 7, ..NoiseSpec::default() };

    let traj = generate_trajectory(RunId(1), 0.1, 0.6, &params, opts.sample_period_s)?;
    let enactment = enact(&traj, &params, &noise, &opts)?;
    let plan = ReplicationPlan {
        run_id: RunId(1),
        replications,
        ic_uncertainty: IcUncertainty::amplitude_bound(&noise, &params),
        seed: 7,
    };
    let set = simulate_replications(&traj, &params, &enactment.measured_initial_state()?, &plan, &opts)?;
    let summary = set.summary(Quantity::AngularPosition)?;
    let std = summary.std.as_deref().unwrap_or(&[]);
    let measured = enactment.measured.require(Quantity::AngularPosition)?;

    println!("t_s,mean_deg,std_deg,measured_deg");
    for i in (0..summary.times.len()).step_by(25) {
        println!(
            "{:.2},{:.4},{:.4},{:.4}",
            summary.times[i],
            summary.mean[i].to_degrees(),
            std.get(i).copied().unwrap_or(0.0).to_degrees(),
            measured.values[i].to_degrees()
        );
    }
    Ok(())
}
