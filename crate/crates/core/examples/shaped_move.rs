//! Plans a shaped move, lets the simulated crane follow it, and prints how
//! much the load still swings once the cart has stopped.
//!
//! cargo run --example shaped_move -- [distance_m]

use twinwatch::plant::{integrate, PlantState};
use twinwatch::trajectory::{generate_trajectory, ZeroVibrationShaper};
use twinwatch::{CraneParams, RunId, SimulationOptions};

fn main() -> twinwatch::Result<()> {
    let distance: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let params = CraneParams::default();
    let opts = SimulationOptions::default();
    let shaper = ZeroVibrationShaper::tuned_to(&params);
    println!(
        "swing period {:.4} s, shaper delay {:.4} s, impulses {:?}",
        params.swing_period(),
        shaper.delay_s,
        shaper.amplitudes
    );

    let traj = generate_trajectory(RunId(1), 0.1, 0.1 + distance, &params, opts.sample_period_s)?;
    println!("move lasts {:.2} s, peak command {:.4} m/s", traj.duration(), traj.peak_speed());

    let log = integrate(&PlantState::at_rest(traj.start()), &traj, &params, &opts)?;
    let rest = traj.duration();
    let residual = log
        .states
        .iter()
        .filter(|s| s.t_s >= rest)
        .map(|s| s.theta_rad.abs())
        .fold(0.0, f64::max);
    let last = log.states.last().expect("at least one sample");
    println!(
        "final position {:.5} m (target {:.5}), residual swing {:.4} deg",
        last.x_m,
        traj.end(),
        residual.to_degrees()
    );
    Ok(())
}
