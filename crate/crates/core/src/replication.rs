//! Replicated twin simulations with sampled initial conditions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ReplicationSummary;
use crate::plant::{simulate, CraneParams, PlantState, SimulationOptions};
use crate::rng::stream_seed;
use crate::trace::{Quantity, RunId, Trace, TraceSet};
use crate::trajectory::{NoiseSpec, Trajectory};

/// Standard deviations of the initial-state measurement error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcUncertainty {
    pub sigma_pos_m: f64,
    pub sigma_vel_mps: f64,
    pub sigma_theta_rad: f64,
    pub sigma_omega_radps: f64,
}

impl IcUncertainty {
    pub fn zero() -> Self {
        IcUncertainty {
            sigma_pos_m: 0.0,
            sigma_vel_mps: 0.0,
            sigma_theta_rad: 0.0,
            sigma_omega_radps: 0.0,
        }
    }

    /// Ties the initial-state uncertainty to the measurement noise. The rate
    /// of swing is not measured directly, so its uncertainty is bounded by
    /// one angle count per sample.
    pub fn from_noise(noise: &NoiseSpec, sample_period_s: f64) -> Self {
        IcUncertainty {
            sigma_pos_m: noise.sigma_pos_m,
            sigma_vel_mps: noise.sigma_vel_mps,
            sigma_theta_rad: noise.sigma_theta_rad,
            sigma_omega_radps: noise.sigma_theta_rad / sample_period_s,
        }
    }

    /// Like [`IcUncertainty::from_noise`], but bounds the swing rate by a
    /// swing of one angle-noise amplitude at the natural frequency.
    pub fn amplitude_bound(noise: &NoiseSpec, params: &CraneParams) -> Self {
        IcUncertainty {
            sigma_pos_m: noise.sigma_pos_m,
            sigma_vel_mps: noise.sigma_vel_mps,
            sigma_theta_rad: noise.sigma_theta_rad,
            sigma_omega_radps: noise.sigma_theta_rad * params.natural_frequency(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        IcUncertainty {
            sigma_pos_m: self.sigma_pos_m * factor,
            sigma_vel_mps: self.sigma_vel_mps * factor,
            sigma_theta_rad: self.sigma_theta_rad * factor,
            sigma_omega_radps: self.sigma_omega_radps * factor,
        }
    }

    fn sigmas(&self) -> [f64; 4] {
        [self.sigma_pos_m, self.sigma_vel_mps, self.sigma_theta_rad, self.sigma_omega_radps]
    }
}

impl Default for IcUncertainty {
    fn default() -> Self {
        IcUncertainty::from_noise(&NoiseSpec::default(), SimulationOptions::default().sample_period_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub run_id: RunId,
    pub replications: usize,
    pub ic_uncertainty: IcUncertainty,
    pub seed: u64,
}

impl ReplicationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("at least one replication is required".into()));
        }
        if self.ic_uncertainty.sigmas().iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("initial-condition sigmas must be finite and non-negative".into()));
        }
        Ok(())
    }
}

const IC_STREAM: u64 = 0x6963;

/// Initial states for each replication. Replication 0 keeps the measurement
/// as is; the others add independent Gaussian errors from their own stream.
pub fn sample_initial_conditions(measured_initial: &PlantState, plan: &ReplicationPlan) -> Result<Vec<PlantState>> {
    plan.validate()?;
    let sigmas = plan.ic_uncertainty.sigmas();
    let dists = sigmas
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| Error::domain(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..plan.replications)
        .map(|r| {
            if r == 0 {
                return *measured_initial;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[plan.seed, plan.run_id.0, r as u64, IC_STREAM]));
            let mut draw = |i: usize| if sigmas[i] > 0.0 { dists[i].sample(&mut rng) } else { 0.0 };
            PlantState {
                t_s: measured_initial.t_s,
                x_m: measured_initial.x_m + draw(0),
                v_mps: measured_initial.v_mps + draw(1),
                theta_rad: measured_initial.theta_rad + draw(2),
                omega_radps: measured_initial.omega_radps + draw(3),
            }
        })
        .collect())
}

/// Every replication's traces, in replication order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSet {
    pub run_id: RunId,
    pub initial_states: Vec<PlantState>,
    pub runs: Vec<TraceSet>,
}

impl ReplicationSet {
    pub fn summary(&self, quantity: Quantity) -> Result<ReplicationSummary> {
        let traces = self
            .runs
            .iter()
            .map(|r| r.require(quantity))
            .collect::<Result<Vec<_>>>()?;
        summarize(&traces)
    }

    pub fn summaries(&self) -> Result<Vec<ReplicationSummary>> {
        Quantity::STATE.into_iter().map(|q| self.summary(q)).collect()
    }
}

/// Simulates the twin once per sampled initial state. Replications run in
/// parallel; the result does not depend on scheduling.
pub fn simulate_replications(
    trajectory: &Trajectory,
    twin_params: &CraneParams,
    measured_initial: &PlantState,
    plan: &ReplicationPlan,
    opts: &SimulationOptions,
) -> Result<ReplicationSet> {
    let initial_states = sample_initial_conditions(measured_initial, plan)?;
    let runs = initial_states
        .par_iter()
        .map(|s| simulate(s, trajectory, twin_params, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationSet {
        run_id: plan.run_id,
        initial_states,
        runs,
    })
}

/// Replicates and summarizes every state quantity.
pub fn run_replications(
    trajectory: &Trajectory,
    twin_params: &CraneParams,
    measured_initial: &PlantState,
    plan: &ReplicationPlan,
    opts: &SimulationOptions,
) -> Result<Vec<ReplicationSummary>> {
    simulate_replications(trajectory, twin_params, measured_initial, plan, opts)?.summaries()
}

/// Elementwise mean and sample standard deviation (divisor `R - 1`).
pub fn summarize(replications: &[&Trace]) -> Result<ReplicationSummary> {
    let Some(first) = replications.first() else {
        return Err(Error::precondition("nothing to summarize"));
    };
    if let Some(bad) = replications.iter().find(|t| t.times != first.times || t.quantity != first.quantity) {
        return Err(Error::Alignment(format!(
            "replication of {} does not share the time grid of {}",
            bad.quantity, first.quantity
        )));
    }
    let r = replications.len();
    let n = first.len();
    let mean: Vec<f64> = (0..n)
        .map(|i| {
            let v0 = first.values[i];
            if replications.iter().all(|t| t.values[i] == v0) {
                v0
            } else {
                replications.iter().map(|t| t.values[i]).sum::<f64>() / r as f64
            }
        })
        .collect();
    let std = (r >= 2).then(|| {
        (0..n)
            .map(|i| {
                let ss: f64 = replications
                    .iter()
                    .map(|t| {
                        let d = t.values[i] - mean[i];
                        d * d
                    })
                    .sum();
                (ss / (r - 1) as f64).sqrt()
            })
            .collect()
    });
    Ok(ReplicationSummary {
        run_id: first.run_id,
        quantity: first.quantity,
        times: first.times.clone(),
        mean,
        std,
        replications: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceKind;
    use crate::trajectory::generate_trajectory;

    fn tr(values: Vec<f64>) -> Trace {
        Trace {
            run_id: RunId(1),
            quantity: Quantity::Position,
            kind: TraceKind::Simulated,
            times: vec![0.0, 0.01],
            values,
        }
    }

    fn plan(r: usize) -> ReplicationPlan {
        ReplicationPlan {
            run_id: RunId(4),
            replications: r,
            ic_uncertainty: IcUncertainty::default(),
            seed: 11,
        }
    }

    #[test]
    fn summarize_two() {
        let (a, b) = (tr(vec![0.0, 2.0]), tr(vec![2.0, 4.0]));
        let s = summarize(&[&a, &b]).unwrap();
        assert_eq!(s.mean, vec![1.0, 3.0]);
        let std = s.std.unwrap();
        assert!(std.iter().all(|v| (v - 2f64.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn summarize_identical_and_single() {
        let a = tr(vec![0.3, 0.7]);
        let s = summarize(&[&a, &a, &a]).unwrap();
        assert_eq!(s.std.unwrap(), vec![0.0, 0.0]);
        let single = summarize(&[&a]).unwrap();
        assert_eq!(single.mean, a.values);
        assert!(single.std.is_none());
        let mut other = tr(vec![1.0, 1.0]);
        other.times = vec![0.0, 0.02];
        assert!(matches!(summarize(&[&a, &other]), Err(Error::Alignment(_))));
    }

    #[test]
    fn single_replication_is_the_measurement() {
        let m = PlantState {
            x_m: 0.1,
            theta_rad: 0.002,
            ..PlantState::default()
        };
        assert_eq!(sample_initial_conditions(&m, &plan(1)).unwrap(), vec![m]);
        assert!(sample_initial_conditions(&m, &plan(0)).is_err());
    }

    #[test]
    fn perturbation_mean_within_four_sigma() {
        let m = PlantState::at_rest(0.2);
        let p = plan(400);
        let states = sample_initial_conditions(&m, &p).unwrap();
        assert_eq!(states, sample_initial_conditions(&m, &p).unwrap());
        let r = states.len() as f64;
        let mean_x = states.iter().map(|s| s.x_m).sum::<f64>() / r;
        let mean_w = states.iter().map(|s| s.omega_radps).sum::<f64>() / r;
        assert!((mean_x - 0.2).abs() < 4.0 * p.ic_uncertainty.sigma_pos_m / r.sqrt());
        assert!(mean_w.abs() < 4.0 * p.ic_uncertainty.sigma_omega_radps / r.sqrt());
    }

    #[test]
    fn zero_uncertainty_collapses_to_the_deterministic_run() {
        let traj = generate_trajectory(RunId(4), 0.0, 0.3, &CraneParams::default(), 0.01).unwrap();
        let opts = SimulationOptions::default();
        let p = ReplicationPlan {
            ic_uncertainty: IcUncertainty::zero(),
            replications: 4,
            ..plan(4)
        };
        let m = PlantState::at_rest(0.0);
        let summaries = run_replications(&traj, &CraneParams::default(), &m, &p, &opts).unwrap();
        let direct = simulate(&m, &traj, &CraneParams::default(), &opts).unwrap();
        for s in &summaries {
            assert!(s.std.as_ref().unwrap().iter().all(|v| *v == 0.0));
            assert_eq!(s.mean, direct.require(s.quantity).unwrap().values);
        }
    }

    #[test]
    fn std_at_start_is_the_perturbation_spread() {
        let traj = generate_trajectory(RunId(4), 0.0, 0.3, &CraneParams::default(), 0.01).unwrap();
        let m = PlantState::at_rest(0.0);
        let p = plan(50);
        let set = simulate_replications(&traj, &CraneParams::default(), &m, &p, &SimulationOptions::default()).unwrap();
        let s = set.summary(Quantity::AngularPosition).unwrap();
        let draws: Vec<f64> = set.initial_states.iter().map(|s| s.theta_rad).collect();
        let mean = draws.iter().sum::<f64>() / 50.0;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / 49.0;
        assert_eq!(s.std.unwrap()[0], var.sqrt());
        assert_eq!(s.mean[0], mean);
    }
}
