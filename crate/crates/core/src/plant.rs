//! Linearized cart-pendulum model of the gantry crane.
//!
//! The same ODE core drives both the simulated "physical" plant and the
//! twin's predictive model; they differ only in the [`CraneParams`] they are
//! given. The cart is velocity-controlled: a commanded acceleration is clamped
//! to the motor limit and further cut back so the cart never exceeds the
//! plant's own top speed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{uniform_grid, Quantity, Trace, TraceKind, TraceSet};
use crate::trajectory::Trajectory;

/// Gain (1/s) of the speed limiter that bleeds off acceleration as the cart
/// approaches `v_max`. Keeps `|v| <= v_max` under RK4 for `dt <= 2 ms`.
pub const VELOCITY_LIMIT_GAIN: f64 = 500.0;

/// Proportional gain (1/s) of the velocity-tracking controller.
pub const VELOCITY_TRACKING_GAIN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraneParams {
    pub rope_length_m: f64,
    pub gravity_mps2: f64,
    pub v_max_mps: f64,
    pub a_max_mps2: f64,
    pub damping_per_s: f64,
    pub track_length_m: f64,
}

impl Default for CraneParams {
    fn default() -> Self {
        CraneParams {
            rope_length_m: 0.4,
            gravity_mps2: 9.81,
            v_max_mps: 0.281,
            a_max_mps2: 2.0,
            damping_per_s: 0.05,
            track_length_m: 0.7,
        }
    }
}

impl CraneParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.rope_length_m,
            self.gravity_mps2,
            self.v_max_mps,
            self.a_max_mps2,
            self.damping_per_s,
            self.track_length_m,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("crane parameters must be finite"));
        }
        if self.rope_length_m <= 0.0 {
            return Err(Error::domain(format!("rope length {} m must be positive", self.rope_length_m)));
        }
        if self.gravity_mps2 <= 0.0 {
            return Err(Error::domain("gravity must be positive"));
        }
        if self.v_max_mps <= 0.0 || self.a_max_mps2 <= 0.0 {
            return Err(Error::domain("velocity and acceleration limits must be positive"));
        }
        if self.damping_per_s < 0.0 {
            return Err(Error::domain("damping must be non-negative"));
        }
        if self.track_length_m <= 0.0 {
            return Err(Error::domain("track length must be positive"));
        }
        Ok(())
    }

    /// Undamped small-angle swing frequency `sqrt(g / L)` in rad/s.
    pub fn natural_frequency(&self) -> f64 {
        (self.gravity_mps2 / self.rope_length_m).sqrt()
    }

    /// Damping ratio of the swing mode.
    pub fn damping_ratio(&self) -> f64 {
        self.damping_per_s / (2.0 * self.natural_frequency())
    }

    /// Small-angle swing period `2 pi sqrt(L / g)`.
    pub fn swing_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.natural_frequency()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: CraneParams = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::RopeLength => self.rope_length_m,
            ParamName::Gravity => self.gravity_mps2,
            ParamName::VMax => self.v_max_mps,
            ParamName::AMax => self.a_max_mps2,
            ParamName::Damping => self.damping_per_s,
            ParamName::TrackLength => self.track_length_m,
        }
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        let slot = match name {
            ParamName::RopeLength => &mut self.rope_length_m,
            ParamName::Gravity => &mut self.gravity_mps2,
            ParamName::VMax => &mut self.v_max_mps,
            ParamName::AMax => &mut self.a_max_mps2,
            ParamName::Damping => &mut self.damping_per_s,
            ParamName::TrackLength => &mut self.track_length_m,
        };
        *slot = value;
    }
}

/// Names of the [`CraneParams`] fields, for estimation problems and update events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    #[serde(rename = "rope_length_m")]
    RopeLength,
    #[serde(rename = "gravity_mps2")]
    Gravity,
    #[serde(rename = "v_max_mps")]
    VMax,
    #[serde(rename = "a_max_mps2")]
    AMax,
    #[serde(rename = "damping_per_s")]
    Damping,
    #[serde(rename = "track_length_m")]
    TrackLength,
}

impl ParamName {
    pub fn field_name(self) -> &'static str {
        match self {
            ParamName::RopeLength => "rope_length_m",
            ParamName::Gravity => "gravity_mps2",
            ParamName::VMax => "v_max_mps",
            ParamName::AMax => "a_max_mps2",
            ParamName::Damping => "damping_per_s",
            ParamName::TrackLength => "track_length_m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub t_s: f64,
    pub x_m: f64,
    pub v_mps: f64,
    pub theta_rad: f64,
    pub omega_radps: f64,
}

impl PlantState {
    pub fn at_rest(x_m: f64) -> Self {
        PlantState {
            x_m,
            ..PlantState::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.t_s, self.x_m, self.v_mps, self.theta_rad, self.omega_radps]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn value(&self, quantity: Quantity) -> Option<f64> {
        match quantity {
            Quantity::Position => Some(self.x_m),
            Quantity::Velocity => Some(self.v_mps),
            Quantity::AngularPosition => Some(self.theta_rad),
            Quantity::AngularVelocity => Some(self.omega_radps),
            Quantity::CommandedVelocity => None,
        }
    }

    fn offset(&self, d: &StateDerivative, h: f64) -> PlantState {
        PlantState {
            t_s: self.t_s + h,
            x_m: self.x_m + h * d.dx,
            v_mps: self.v_mps + h * d.dv,
            theta_rad: self.theta_rad + h * d.dtheta,
            omega_radps: self.omega_radps + h * d.domega,
        }
    }
}

/// Time derivative of the four state components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub dx: f64,
    pub dv: f64,
    pub dtheta: f64,
    pub domega: f64,
}

/// Acceleration the cart actually achieves for a commanded acceleration.
pub fn applied_acceleration(v_mps: f64, a_cmd: f64, params: &CraneParams) -> f64 {
    let a = a_cmd.clamp(-params.a_max_mps2, params.a_max_mps2);
    if a > 0.0 {
        a.min(VELOCITY_LIMIT_GAIN * (params.v_max_mps - v_mps))
    } else if a < 0.0 {
        a.max(VELOCITY_LIMIT_GAIN * (-params.v_max_mps - v_mps))
    } else {
        a
    }
}

pub fn derivatives(state: &PlantState, a_cmd: f64, params: &CraneParams) -> Result<StateDerivative> {
    if !state.is_finite() || !a_cmd.is_finite() {
        return Err(Error::domain("non-finite state or command"));
    }
    let a = applied_acceleration(state.v_mps, a_cmd, params);
    let g_over_l = params.gravity_mps2 / params.rope_length_m;
    Ok(StateDerivative {
        dx: state.v_mps,
        dv: a,
        dtheta: state.omega_radps,
        domega: -g_over_l * state.theta_rad
            - params.damping_per_s * state.omega_radps
            - a / params.rope_length_m,
    })
}

/// One classic fourth-order Runge-Kutta step with `a_cmd` held over the step.
pub fn step_rk4(state: &PlantState, a_cmd: f64, params: &CraneParams, dt: f64) -> Result<PlantState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::precondition(format!("step size {dt} must be positive")));
    }
    let k1 = derivatives(state, a_cmd, params)?;
    let k2 = derivatives(&state.offset(&k1, dt / 2.0), a_cmd, params)?;
    let k3 = derivatives(&state.offset(&k2, dt / 2.0), a_cmd, params)?;
    let k4 = derivatives(&state.offset(&k3, dt), a_cmd, params)?;
    let combine = |a: f64, b: f64, c: f64, d: f64| (a + 2.0 * b + 2.0 * c + d) / 6.0;
    let slope = StateDerivative {
        dx: combine(k1.dx, k2.dx, k3.dx, k4.dx),
        dv: combine(k1.dv, k2.dv, k3.dv, k4.dv),
        dtheta: combine(k1.dtheta, k2.dtheta, k3.dtheta, k4.dtheta),
        domega: combine(k1.domega, k2.domega, k3.domega, k4.domega),
    };
    let next = state.offset(&slope, dt);
    if !next.is_finite() {
        return Err(Error::domain("integration diverged"));
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    #[default]
    None,
    RopeLengthError,
    VelocityDeficit,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::None => "none",
            FaultKind::RopeLengthError => "rope_length_error",
            FaultKind::VelocityDeficit => "velocity_deficit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [FaultKind::None, FaultKind::RopeLengthError, FaultKind::VelocityDeficit]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

/// A divergence injected between the plant and the twin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FaultSpec {
    pub kind: FaultKind,
    #[serde(default)]
    pub delta_fraction: f64,
}

impl FaultSpec {
    pub const NONE: FaultSpec = FaultSpec {
        kind: FaultKind::None,
        delta_fraction: 0.0,
    };

    pub fn rope_length(delta_fraction: f64) -> Self {
        FaultSpec {
            kind: FaultKind::RopeLengthError,
            delta_fraction,
        }
    }

    pub fn velocity_deficit(delta_fraction: f64) -> Self {
        FaultSpec {
            kind: FaultKind::VelocityDeficit,
            delta_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta_fraction.is_finite() || self.delta_fraction <= -1.0 {
            return Err(Error::domain(format!(
                "fault fraction {} must be finite and greater than -1",
                self.delta_fraction
            )));
        }
        Ok(())
    }
}

/// Plant parameters that realize `fault` relative to the twin's `params`.
///
/// A velocity deficit follows the inverted set-up used on the rig: the twin
/// keeps believing in `v_max`, while the plant only reaches `v_max / (1 + delta)`.
pub fn apply_fault(params: &CraneParams, fault: &FaultSpec) -> Result<CraneParams> {
    fault.validate()?;
    let mut out = *params;
    match fault.kind {
        FaultKind::None => {}
        FaultKind::RopeLengthError => out.rope_length_m *= 1.0 + fault.delta_fraction,
        FaultKind::VelocityDeficit => out.v_max_mps /= 1.0 + fault.delta_fraction,
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub dt_s: f64,
    pub sample_period_s: f64,
    /// How long to keep simulating after the trajectory has come to rest.
    pub settle_tail_s: f64,
    pub velocity_gain: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            dt_s: 0.001,
            sample_period_s: 0.01,
            settle_tail_s: 2.0,
            velocity_gain: VELOCITY_TRACKING_GAIN,
        }
    }
}

impl SimulationOptions {
    pub fn steps_per_sample(&self) -> Result<usize> {
        if !(self.dt_s > 0.0) || !(self.sample_period_s > 0.0) {
            return Err(Error::precondition("step and sample periods must be positive"));
        }
        let ratio = self.sample_period_s / self.dt_s;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::precondition(format!(
                "sample period {} s is not an integer multiple of dt {} s",
                self.sample_period_s, self.dt_s
            )));
        }
        Ok(steps as usize)
    }

    /// Number of samples emitted for a trajectory of the given duration.
    pub fn sample_count(&self, trajectory_duration_s: f64) -> usize {
        ((trajectory_duration_s + self.settle_tail_s) / self.sample_period_s).round() as usize + 1
    }
}

/// Sampled plant states plus the velocity setpoint in force at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLog {
    pub times: Vec<f64>,
    pub states: Vec<PlantState>,
    pub commanded: Vec<f64>,
}

/// Integrates the plant under the trajectory-following control law.
pub fn integrate(
    initial: &PlantState,
    trajectory: &Trajectory,
    params: &CraneParams,
    opts: &SimulationOptions,
) -> Result<StateLog> {
    params.validate()?;
    if !initial.is_finite() {
        return Err(Error::domain("non-finite initial state"));
    }
    if initial.t_s != 0.0 {
        return Err(Error::precondition("simulations start at run-relative t = 0"));
    }
    let steps = opts.steps_per_sample()?;
    let count = opts.sample_count(trajectory.duration());
    let times = uniform_grid(opts.sample_period_s, count);

    let mut states = Vec::with_capacity(count);
    let mut commanded = Vec::with_capacity(count);
    let mut state = *initial;
    let mut step_index: u64 = 0;
    for (k, &t) in times.iter().enumerate() {
        state.t_s = t;
        states.push(state);
        commanded.push(trajectory.command_at(t));
        if k + 1 == count {
            break;
        }
        for _ in 0..steps {
            let t_step = step_index as f64 * opts.dt_s;
            let a_cmd = opts.velocity_gain * (trajectory.command_at(t_step) - state.v_mps);
            state = step_rk4(&state, a_cmd, params, opts.dt_s)?;
            step_index += 1;
        }
    }
    Ok(StateLog {
        times,
        states,
        commanded,
    })
}

impl StateLog {
    pub fn into_traces(self, run_id: crate::trace::RunId, kind: TraceKind) -> TraceSet {
        let traces = Quantity::STATE
            .into_iter()
            .map(|q| Trace {
                run_id,
                quantity: q,
                kind,
                times: self.times.clone(),
                values: self.states.iter().map(|s| s.value(q).unwrap_or(0.0)).collect(),
            })
            .collect();
        TraceSet { traces }
    }
}

/// Simulates the crane following `trajectory` and samples the four state
/// quantities on a uniform grid starting at t = 0.
pub fn simulate(
    initial: &PlantState,
    trajectory: &Trajectory,
    params: &CraneParams,
    opts: &SimulationOptions,
) -> Result<TraceSet> {
    Ok(integrate(initial, trajectory, params, opts)?.into_traces(trajectory.run_id, TraceKind::Simulated))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(params: &CraneParams, theta0: f64, dt: f64, horizon: f64) -> Vec<PlantState> {
        let mut s = PlantState {
            theta_rad: theta0,
            ..PlantState::default()
        };
        let steps = (horizon / dt).round() as usize;
        let mut out = vec![s];
        for _ in 0..steps {
            s = step_rk4(&s, 0.0, params, dt).unwrap();
            out.push(s);
        }
        out
    }

    #[test]
    fn rest_is_equilibrium() {
        let d = derivatives(&PlantState::default(), 0.0, &CraneParams::default()).unwrap();
        assert_eq!(d, StateDerivative::default());
        let s = step_rk4(&PlantState::default(), 0.0, &CraneParams::default(), 0.25).unwrap();
        assert_eq!(s, PlantState { t_s: 0.25, ..PlantState::default() });
    }

    #[test]
    fn small_angle_restoring_acceleration() {
        let params = CraneParams {
            damping_per_s: 0.0,
            ..CraneParams::default()
        };
        let s = PlantState {
            theta_rad: 0.01,
            ..PlantState::default()
        };
        let d = derivatives(&s, 0.0, &params).unwrap();
        assert!((d.domega - (-0.24525)).abs() < 1e-15);
    }

    #[test]
    fn acceleration_saturates() {
        let d = derivatives(&PlantState::default(), 10.0, &CraneParams::default()).unwrap();
        assert_eq!(d.dv, 2.0);
        let d = derivatives(&PlantState::default(), -10.0, &CraneParams::default()).unwrap();
        assert_eq!(d.dv, -2.0);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = CraneParams::default();
        assert!(matches!(derivatives(&PlantState::default(), f64::NAN, &p), Err(Error::Domain(_))));
        let s = PlantState {
            v_mps: f64::INFINITY,
            ..PlantState::default()
        };
        assert!(derivatives(&s, 0.0, &p).is_err());
        assert!(step_rk4(&PlantState::default(), 0.0, &p, 0.0).is_err());
    }

    #[test]
    fn half_period_between_zero_crossings() {
        let params = CraneParams {
            damping_per_s: 0.0,
            ..CraneParams::default()
        };
        let dt = 1e-4;
        let states = free(&params, 0.01, dt, 4.0);
        let mut crossings = Vec::new();
        for w in states.windows(2) {
            let (a, b) = (w[0].theta_rad, w[1].theta_rad);
            if a.signum() != b.signum() && a != 0.0 {
                crossings.push(w[0].t_s + dt * a / (a - b));
            }
        }
        let expected = 2.0 * std::f64::consts::PI * (0.4f64 / 9.81).sqrt() / 2.0;
        assert!((expected * 2.0 - 1.2686).abs() < 5e-4);
        for w in crossings.windows(2) {
            assert!(((w[1] - w[0]) - expected).abs() / expected < 0.01);
        }
    }

    #[test]
    fn damped_swing_envelope_shrinks() {
        let states = free(&CraneParams::default(), 0.03, 1e-3, 10.0);
        let mut peaks = Vec::new();
        for w in states.windows(3) {
            let m = w[1].theta_rad.abs();
            if m >= w[0].theta_rad.abs() && m >= w[2].theta_rad.abs() && m > 1e-6 {
                peaks.push(m);
            }
        }
        assert!(peaks.len() > 10);
        assert!(peaks.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn step_halving_converges() {
        let params = CraneParams::default();
        let end = |dt: f64| {
            let mut s = PlantState {
                theta_rad: 0.02,
                omega_radps: 0.1,
                ..PlantState::default()
            };
            for _ in 0..(5.0 / dt).round() as usize {
                s = step_rk4(&s, 0.0, &params, dt).unwrap();
            }
            s
        };
        let (a, b) = (end(1e-3), end(5e-4));
        for (x, y) in [(a.theta_rad, b.theta_rad), (a.omega_radps, b.omega_radps)] {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn faults_rescale_the_right_parameter() {
        let p = CraneParams::default();
        let rope = apply_fault(&p, &FaultSpec::rope_length(0.05)).unwrap();
        assert!((rope.rope_length_m - 0.42).abs() < 1e-15);
        assert_eq!(rope.v_max_mps, p.v_max_mps);
        let slow = apply_fault(&p, &FaultSpec::velocity_deficit(0.10)).unwrap();
        assert!((slow.v_max_mps - 0.281 / 1.1).abs() < 1e-15);
        assert!((slow.v_max_mps - 0.25545).abs() < 1e-5);
        assert_eq!(apply_fault(&p, &FaultSpec::NONE).unwrap(), p);
        assert!(apply_fault(&p, &FaultSpec::rope_length(-1.0)).is_err());
    }

    #[test]
    fn limiter_never_overshoots() {
        let p = CraneParams::default();
        let mut s = PlantState::default();
        for _ in 0..2000 {
            s = step_rk4(&s, 100.0, &p, 1e-3).unwrap();
            assert!(s.v_mps <= p.v_max_mps + 1e-9);
        }
        assert!((s.v_mps - p.v_max_mps).abs() < 1e-9);
    }

    #[test]
    fn params_json_uses_field_names() {
        let text = serde_json::to_string(&CraneParams::default()).unwrap();
        assert!(text.contains("\"rope_length_m\":0.4"));
        let back: CraneParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, CraneParams::default());
    }
}
