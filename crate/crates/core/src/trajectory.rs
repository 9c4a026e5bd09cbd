//! Anti-sway reference trajectories and their enactment on the plant.
//!
//! A move is planned as a trapezoidal velocity profile bounded by the crane's
//! velocity and acceleration limits, then convolved with a two-impulse
//! zero-vibration shaper tuned to the swing mode of the model. Enactment runs
//! the plant under a velocity-tracking controller and records noisy
//! measurements, standing in for the rig's controller and logger.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::significant;
use crate::plant::{integrate, CraneParams, PlantState, SimulationOptions};
use crate::rng::stream_seed;
use crate::trace::{Quantity, RunId, Trace, TraceKind, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub x_ref_m: f64,
    pub v_cmd_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub run_id: RunId,
    pub samples: Vec<TrajectorySample>,
    pub v_max_used_mps: f64,
    pub sample_period_s: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t_s)
    }

    pub fn start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.x_ref_m)
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.x_ref_m)
    }

    pub fn peak_speed(&self) -> f64 {
        self.samples.iter().map(|s| s.v_cmd_mps.abs()).fold(0.0, f64::max)
    }

    /// Velocity setpoint at time `t`, linearly interpolated between samples
    /// and zero once the trajectory has ended.
    pub fn command_at(&self, t: f64) -> f64 {
        let n = self.samples.len();
        if n == 0 || t >= self.duration() {
            return self.samples.last().map_or(0.0, |s| s.v_cmd_mps);
        }
        if t <= 0.0 {
            return self.samples[0].v_cmd_mps;
        }
        let pos = t / self.sample_period_s;
        let i = (pos.floor() as usize).min(n - 2);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        let w = (t - a.t_s) / (b.t_s - a.t_s);
        a.v_cmd_mps + w * (b.v_cmd_mps - a.v_cmd_mps)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Err(Error::precondition("trajectory has no samples"));
        };
        let last = self.samples.last().expect("non-empty");
        if first.t_s != 0.0 {
            return Err(Error::precondition("trajectory must start at t = 0"));
        }
        if first.v_cmd_mps != 0.0 || last.v_cmd_mps != 0.0 {
            return Err(Error::precondition("trajectory must start and end at rest"));
        }
        let dt = self.sample_period_s;
        for (k, w) in self.samples.windows(2).enumerate() {
            let step = w[1].t_s - w[0].t_s;
            if !(step > 0.0) || (step - dt).abs() > 1e-9 {
                return Err(Error::precondition(format!("non-uniform sample spacing at index {k}")));
            }
            if (w[1].x_ref_m - w[0].x_ref_m).abs() > self.v_max_used_mps * step + 1e-12 {
                return Err(Error::precondition(format!("position setpoint jumps at index {k}")));
            }
        }
        if self.samples.iter().any(|s| s.v_cmd_mps.abs() > self.v_max_used_mps) {
            return Err(Error::precondition("velocity setpoint exceeds the bound"));
        }
        Ok(())
    }

    pub fn reference_traces(&self) -> TraceSet {
        let times: Vec<f64> = self.samples.iter().map(|s| s.t_s).collect();
        let make = |quantity, values: Vec<f64>| Trace {
            run_id: self.run_id,
            quantity,
            kind: TraceKind::Reference,
            times: times.clone(),
            values,
        };
        TraceSet {
            traces: vec![
                make(Quantity::Position, self.samples.iter().map(|s| s.x_ref_m).collect()),
                make(Quantity::Velocity, self.samples.iter().map(|s| s.v_cmd_mps).collect()),
            ],
        }
    }

    /// Writes `t_s,x_ref_m,v_cmd_mps` rows with nine significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["t_s", "x_ref_m", "v_cmd_mps"])?;
        for s in &self.samples {
            w.write_record([
                significant(s.t_s, 9),
                significant(s.x_ref_m, 9),
                significant(s.v_cmd_mps, 9),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(run_id: RunId, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "x_ref_m", "v_cmd_mps"] {
            return Err(Error::Config(format!("unexpected trajectory header {headers:?}")));
        }
        let samples = r
            .deserialize::<TrajectorySample>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_samples(run_id, samples)
    }

    /// Rebuilds a trajectory from recorded samples, inferring the grid spacing
    /// and the velocity bound from the data.
    pub fn from_samples(run_id: RunId, samples: Vec<TrajectorySample>) -> Result<Self> {
        let sample_period_s = match samples.as_slice() {
            [a, b, ..] => b.t_s - a.t_s,
            _ => SimulationOptions::default().sample_period_s,
        };
        let v_max_used_mps = samples.iter().map(|s| s.v_cmd_mps.abs()).fold(0.0, f64::max);
        let traj = Trajectory {
            run_id,
            samples,
            v_max_used_mps: if v_max_used_mps > 0.0 { v_max_used_mps } else { f64::MIN_POSITIVE },
            sample_period_s,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Trapezoidal (or triangular, for short moves) velocity profile.
#[derive(Debug, Clone, Copy)]
struct Trapezoid {
    accel: f64,
    peak: f64,
    t_ramp: f64,
    t_cruise: f64,
    distance: f64,
}

impl Trapezoid {
    fn plan(distance: f64, v_max: f64, a_max: f64) -> Self {
        let ramp_distance = v_max * v_max / a_max;
        let (peak, t_cruise) = if ramp_distance >= distance {
            ((distance * a_max).sqrt(), 0.0)
        } else {
            (v_max, (distance - ramp_distance) / v_max)
        };
        Trapezoid {
            accel: a_max,
            peak,
            t_ramp: peak / a_max,
            t_cruise,
            distance,
        }
    }

    fn duration(&self) -> f64 {
        2.0 * self.t_ramp + self.t_cruise
    }

    fn velocity(&self, t: f64) -> f64 {
        let decel_start = self.t_ramp + self.t_cruise;
        if t <= 0.0 || t >= self.duration() {
            0.0
        } else if t < self.t_ramp {
            self.accel * t
        } else if t <= decel_start {
            self.peak
        } else {
            (self.peak - self.accel * (t - decel_start)).max(0.0)
        }
    }

    fn position(&self, t: f64) -> f64 {
        let decel_start = self.t_ramp + self.t_cruise;
        if t <= 0.0 {
            0.0
        } else if t >= self.duration() {
            self.distance
        } else if t < self.t_ramp {
            0.5 * self.accel * t * t
        } else if t <= decel_start {
            0.5 * self.peak * self.t_ramp + self.peak * (t - self.t_ramp)
        } else {
            let tau = self.duration() - t;
            self.distance - 0.5 * self.accel * tau * tau
        }
    }
}

/// Zero-vibration input shaper: two impulses half a damped period apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroVibrationShaper {
    pub amplitudes: [f64; 2],
    pub delay_s: f64,
}

impl ZeroVibrationShaper {
    pub fn tuned_to(params: &CraneParams) -> Self {
        let wn = params.natural_frequency();
        let zeta = params.damping_ratio().min(0.999);
        let root = (1.0 - zeta * zeta).sqrt();
        let k = (-zeta * std::f64::consts::PI / root).exp();
        ZeroVibrationShaper {
            amplitudes: [1.0 / (1.0 + k), k / (1.0 + k)],
            delay_s: std::f64::consts::PI / (wn * root),
        }
    }
}

/// Plans a shaped point-to-point move from `start_m` to `end_m`.
pub fn generate_trajectory(
    run_id: RunId,
    start_m: f64,
    end_m: f64,
    params: &CraneParams,
    sample_period_s: f64,
) -> Result<Trajectory> {
    params.validate()?;
    if !(sample_period_s > 0.0) {
        return Err(Error::precondition("sample period must be positive"));
    }
    for p in [start_m, end_m] {
        if !(0.0..=params.track_length_m).contains(&p) {
            return Err(Error::precondition(format!(
                "position {p} m outside the track [0, {}]",
                params.track_length_m
            )));
        }
    }
    let distance = (end_m - start_m).abs();
    if distance == 0.0 {
        return Ok(Trajectory {
            run_id,
            samples: vec![TrajectorySample {
                t_s: 0.0,
                x_ref_m: start_m,
                v_cmd_mps: 0.0,
            }],
            v_max_used_mps: params.v_max_mps,
            sample_period_s,
        });
    }
    let direction = (end_m - start_m).signum();
    let profile = Trapezoid::plan(distance, params.v_max_mps, params.a_max_mps2);
    let shaper = ZeroVibrationShaper::tuned_to(params);
    let [a1, a2] = shaper.amplitudes;
    let total = profile.duration() + shaper.delay_s;
    let last = (total / sample_period_s - 1e-9).ceil() as usize;

    let samples = (0..=last)
        .map(|k| {
            let t = k as f64 * sample_period_s;
            if k == last {
                return TrajectorySample {
                    t_s: t,
                    x_ref_m: end_m,
                    v_cmd_mps: 0.0,
                };
            }
            let late = t - shaper.delay_s;
            let v = (a1 * profile.velocity(t) + a2 * profile.velocity(late)).min(params.v_max_mps);
            let x = a1 * profile.position(t) + a2 * profile.position(late);
            TrajectorySample {
                t_s: t,
                x_ref_m: start_m + direction * x,
                v_cmd_mps: direction * v,
            }
        })
        .collect();

    Ok(Trajectory {
        run_id,
        samples,
        v_max_used_mps: params.v_max_mps,
        sample_period_s,
    })
}

/// Standard deviations of the additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_pos_m: f64,
    pub sigma_vel_mps: f64,
    pub sigma_theta_rad: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_pos_m: 0.0005,
            sigma_vel_mps: 0.001,
            // One count of a 2048 PPR quadrature encoder.
            sigma_theta_rad: 0.000767,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn silent() -> Self {
        NoiseSpec {
            sigma_pos_m: 0.0,
            sigma_vel_mps: 0.0,
            sigma_theta_rad: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_pos_m, self.sigma_vel_mps, self.sigma_theta_rad];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::domain("noise standard deviations must be finite and non-negative"));
        }
        Ok(())
    }

    /// Per-quantity standard deviation. The swing rate and the setpoint are
    /// logged without added noise.
    pub fn sigma(&self, quantity: Quantity) -> f64 {
        match quantity {
            Quantity::Position => self.sigma_pos_m,
            Quantity::Velocity => self.sigma_vel_mps,
            Quantity::AngularPosition => self.sigma_theta_rad,
            Quantity::AngularVelocity | Quantity::CommandedVelocity => 0.0,
        }
    }
}

/// Everything logged while the plant executes one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Enactment {
    pub measured: TraceSet,
    /// Noise-free plant states, kept for testing and diagnostics.
    pub truth: TraceSet,
    /// The controller's velocity setpoint at each sample.
    pub commanded: Trace,
}

impl Enactment {
    /// First measured sample as a plant state at t = 0.
    pub fn measured_initial_state(&self) -> Result<PlantState> {
        initial_state_of(&self.measured)
    }
}

pub(crate) fn initial_state_of(traces: &TraceSet) -> Result<PlantState> {
    let first = |q| -> Result<f64> {
        traces
            .require(q)?
            .values
            .first()
            .copied()
            .ok_or_else(|| Error::precondition(format!("{q} trace is empty")))
    };
    Ok(PlantState {
        t_s: 0.0,
        x_m: first(Quantity::Position)?,
        v_mps: first(Quantity::Velocity)?,
        theta_rad: first(Quantity::AngularPosition)?,
        omega_radps: first(Quantity::AngularVelocity)?,
    })
}

/// Makes the plant follow `trajectory`, starting at rest on its first setpoint.
pub fn enact(
    trajectory: &Trajectory,
    plant_params: &CraneParams,
    noise: &NoiseSpec,
    opts: &SimulationOptions,
) -> Result<Enactment> {
    trajectory.validate()?;
    noise.validate()?;
    let log = integrate(&PlantState::at_rest(trajectory.start()), trajectory, plant_params, opts)?;
    let commanded = Trace {
        run_id: trajectory.run_id,
        quantity: Quantity::CommandedVelocity,
        kind: TraceKind::Measured,
        times: log.times.clone(),
        values: log.commanded.clone(),
    };
    let truth = log.into_traces(trajectory.run_id, TraceKind::Simulated);

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[noise.seed, trajectory.run_id.0, 0x6e6f_6973_65]));
    let mut measured = truth.clone();
    for trace in &mut measured.traces {
        trace.kind = TraceKind::Measured;
        let sigma = noise.sigma(trace.quantity);
        if sigma > 0.0 {
            let dist = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
            for v in &mut trace.values {
                *v += dist.sample(&mut rng);
            }
        }
    }
    Ok(Enactment {
        measured,
        truth,
        commanded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal() -> Trajectory {
        generate_trajectory(RunId(1), 0.0, 0.5, &CraneParams::default(), 0.01).unwrap()
    }

    #[test]
    fn zero_length_move_is_single_sample() {
        let t = generate_trajectory(RunId(1), 0.1, 0.1, &CraneParams::default(), 0.01).unwrap();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.samples[0].v_cmd_mps, 0.0);
        assert_eq!(t.samples[0].x_ref_m, 0.1);
        t.validate().unwrap();
    }

    #[test]
    fn long_move_is_velocity_limited() {
        let t = nominal();
        t.validate().unwrap();
        assert!((t.peak_speed() - 0.281).abs() < 1e-12);
        assert!(t.peak_speed() <= 0.281);
        assert_eq!(t.samples.last().unwrap().x_ref_m, 0.5);
    }

    #[test]
    fn bounds_hold_at_every_sample() {
        let p = CraneParams::default();
        for (a, b) in [(0.0, 0.5), (0.6, 0.1), (0.2, 0.23), (0.0, 0.7)] {
            let t = generate_trajectory(RunId(1), a, b, &p, 0.01).unwrap();
            t.validate().unwrap();
            for w in t.samples.windows(2) {
                let accel = (w[1].v_cmd_mps - w[0].v_cmd_mps).abs() / 0.01;
                assert!(accel <= p.a_max_mps2 + 1e-9, "{accel}");
            }
            let integral: f64 = t
                .samples
                .windows(2)
                .map(|w| 0.5 * (w[0].v_cmd_mps + w[1].v_cmd_mps) * 0.01)
                .sum();
            assert!((integral - (b - a)).abs() < 1e-4, "{integral} vs {}", b - a);
        }
    }

    #[test]
    fn out_of_track_rejected() {
        let p = CraneParams::default();
        assert!(generate_trajectory(RunId(1), 0.0, 0.8, &p, 0.01).is_err());
        assert!(generate_trajectory(RunId(1), -0.1, 0.3, &p, 0.01).is_err());
    }

    #[test]
    fn shaper_amplitudes_sum_to_one() {
        let s = ZeroVibrationShaper::tuned_to(&CraneParams::default());
        assert!((s.amplitudes[0] + s.amplitudes[1] - 1.0).abs() < 1e-15);
        assert!(s.amplitudes[0] > s.amplitudes[1]);
        let undamped = ZeroVibrationShaper::tuned_to(&CraneParams {
            damping_per_s: 0.0,
            ..CraneParams::default()
        });
        assert_eq!(undamped.amplitudes, [0.5, 0.5]);
        assert!((undamped.delay_s - CraneParams::default().swing_period() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn nominal_enactment_arrives_without_sway() {
        let t = nominal();
        let e = enact(&t, &CraneParams::default(), &NoiseSpec::silent(), &SimulationOptions::default()).unwrap();
        let x = e.measured.require(Quantity::Position).unwrap();
        let theta = e.measured.require(Quantity::AngularPosition).unwrap();
        assert!((x.values.last().unwrap() - 0.5).abs() < 1e-3);
        let arrival = t.duration();
        let residual = theta
            .samples()
            .filter(|(time, _)| *time >= arrival)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        assert!(residual < 0.5f64.to_radians(), "{residual}");
        let tracking = t
            .samples
            .iter()
            .zip(&x.values)
            .map(|(s, x)| (s.x_ref_m - x).abs())
            .fold(0.0, f64::max);
        // Pure velocity tracking lags the ramp by v/k_v at cruise speed.
        let lag = t.v_max_used_mps / SimulationOptions::default().velocity_gain;
        assert!(tracking <= lag + 5e-4, "{tracking}");
    }

    #[test]
    fn velocity_deficit_caps_measured_speed() {
        let plant = crate::plant::apply_fault(
            &CraneParams::default(),
            &crate::plant::FaultSpec::velocity_deficit(0.10),
        )
        .unwrap();
        let e = enact(&nominal(), &plant, &NoiseSpec::silent(), &SimulationOptions::default()).unwrap();
        let vmax = e.measured.require(Quantity::Velocity).unwrap().values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(vmax <= plant.v_max_mps + 1e-9);
        assert!((vmax - 0.25545).abs() < 1e-4, "{vmax}");
    }

    #[test]
    fn noise_is_seeded() {
        let t = nominal();
        let noise = NoiseSpec {
            seed: 7,
            ..NoiseSpec::default()
        };
        let opts = SimulationOptions::default();
        let a = enact(&t, &CraneParams::default(), &noise, &opts).unwrap();
        let b = enact(&t, &CraneParams::default(), &noise, &opts).unwrap();
        assert_eq!(a, b);
        let c = enact(&t, &CraneParams::default(), &NoiseSpec { seed: 8, ..noise }, &opts).unwrap();
        assert_ne!(a.measured, c.measured);
        let silent = enact(&t, &CraneParams::default(), &NoiseSpec::silent(), &opts).unwrap();
        for (m, tr) in silent.measured.traces.iter().zip(&silent.truth.traces) {
            assert_eq!(m.values, tr.values);
        }
        let len = a.measured.traces[0].len();
        assert_eq!(len, opts.sample_count(t.duration()));
        assert_eq!(len, t.samples.len() + 200);
    }

    #[test]
    fn csv_round_trip_keeps_nine_digits() {
        let t = nominal();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,x_ref_m,v_cmd_mps\n"));
        let back = Trajectory::read_csv(RunId(1), buf.as_slice()).unwrap();
        assert_eq!(back.samples.len(), t.samples.len());
        for (a, b) in back.samples.iter().zip(&t.samples) {
            assert!((a.x_ref_m - b.x_ref_m).abs() <= 5e-9 * b.x_ref_m.abs() + 1e-15);
        }
    }
}
