//! Recovers the plant's real top speed from one divergent run, once per
//! initial-guess policy.
//!
//! cargo run --release --example estimate_top_speed -- [deficit]

use twinwatch::estimation::{estimate_parameters, EstimationProblem, InitialGuessPolicy, NelderMeadOptions};
use twinwatch::plant::apply_fault;
use twinwatch::scenario::{execute_run, ExecutionConfig, Move};
use twinwatch::{FaultSpec, Quantity, RunId};

fn main() -> twinwatch::Result<()> {
    let deficit: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.10);
    let cfg = ExecutionConfig { seed: 11, replications: 2, ..ExecutionConfig::default() };
    let twin = cfg.params;
    let plant = apply_fault(&twin, &FaultSpec::velocity_deficit(deficit))?;
    let run = execute_run(&cfg, RunId(1), &twin, &plant, Move::default(), &Quantity::VALIDATED)?;
    let data = run.estimation_data();
    println!("twin v_max {:.5} m/s, plant v_max {:.5} m/s", twin.v_max_mps, plant.v_max_mps);

    for policy in [
        InitialGuessPolicy::ReferenceMax,
        InitialGuessPolicy::FractionOfReference(0.9),
        InitialGuessPolicy::MeasuredMaxPassthrough,
    ] {
        let problem = EstimationProblem::v_max(&data, policy)?;
        let r = estimate_parameters(&data, &twin, &problem, policy, &NelderMeadOptions::default(), &cfg.simulation, None)?;
        let est = r.proposed.v_max_mps;
        println!(
            "{:<28} guess {:.5} -> {:.5} m/s ({:+.2}%), {} iterations, converged {}",
            policy.label(),
            r.initial_guess[0],
            est,
            100.0 * (est - plant.v_max_mps) / plant.v_max_mps,
            r.iterations,
            r.converged
        );
    }
    Ok(())
}
