//! Time-indexed series shared by the simulator, the store and the metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of one routine operation (one lateral move of the crane).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub u64);

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Position,
    Velocity,
    AngularPosition,
    AngularVelocity,
    /// Velocity setpoint logged by the controller. Only used to rebuild the
    /// experiment input of legacy runs.
    CommandedVelocity,
}

impl Quantity {
    /// The four plant state quantities, in state-vector order.
    pub const STATE: [Quantity; 4] = [
        Quantity::Position,
        Quantity::Velocity,
        Quantity::AngularPosition,
        Quantity::AngularVelocity,
    ];

    /// Quantities that are both simulated and directly measurable on the rig.
    pub const VALIDATED: [Quantity; 3] = [
        Quantity::Position,
        Quantity::Velocity,
        Quantity::AngularPosition,
    ];

    pub const ALL: [Quantity; 5] = [
        Quantity::Position,
        Quantity::Velocity,
        Quantity::AngularPosition,
        Quantity::AngularVelocity,
        Quantity::CommandedVelocity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Position => "position",
            Quantity::Velocity => "velocity",
            Quantity::AngularPosition => "angular_position",
            Quantity::AngularVelocity => "angular_velocity",
            Quantity::CommandedVelocity => "commanded_velocity",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Quantity::Position => "m",
            Quantity::Velocity | Quantity::CommandedVelocity => "m/s",
            Quantity::AngularPosition => "rad",
            Quantity::AngularVelocity => "rad/s",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Quantity::Position => "x",
            Quantity::Velocity => "v",
            Quantity::AngularPosition => "theta",
            Quantity::AngularVelocity => "omega",
            Quantity::CommandedVelocity => "v_cmd",
        }
    }

    /// Stable numeric id used as the `quantity` table key.
    pub fn id(self) -> u32 {
        match self {
            Quantity::Position => 1,
            Quantity::Velocity => 2,
            Quantity::AngularPosition => 3,
            Quantity::AngularVelocity => 4,
            Quantity::CommandedVelocity => 5,
        }
    }

    pub fn from_id(id: u32) -> Option<Quantity> {
        Quantity::ALL.into_iter().find(|q| q.id() == id)
    }

    pub fn from_name(name: &str) -> Option<Quantity> {
        Quantity::ALL.into_iter().find(|q| q.name() == name)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Measured,
    Reference,
    /// A single twin simulation (one replication).
    Simulated,
    SimulatedMean,
    SimulatedStd,
}

/// One quantity of one run over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub run_id: RunId,
    pub quantity: Quantity,
    pub kind: TraceKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    /// Builds a trace and checks its invariants.
    pub fn new(
        run_id: RunId,
        quantity: Quantity,
        kind: TraceKind,
        times: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let trace = Trace {
            run_id,
            quantity,
            kind,
            times,
            values,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::Alignment(format!(
                "{} trace has {} timestamps but {} values",
                self.quantity,
                self.times.len(),
                self.values.len()
            )));
        }
        if let Some(w) = self.times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::precondition(format!(
                "timestamps not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if self.times.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("{} trace holds a non-finite sample", self.quantity)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

/// The traces a simulation or an enactment produces, one per quantity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSet {
    pub traces: Vec<Trace>,
}

impl TraceSet {
    pub fn get(&self, quantity: Quantity) -> Option<&Trace> {
        self.traces.iter().find(|t| t.quantity == quantity)
    }

    pub fn require(&self, quantity: Quantity) -> Result<&Trace> {
        self.get(quantity)
            .ok_or_else(|| Error::NotFound(format!("no {quantity} trace")))
    }

    pub fn times(&self) -> &[f64] {
        self.traces.first().map(|t| t.times.as_slice()).unwrap_or(&[])
    }
}

/// Uniform time grid `k * period` for `k = 0..count`.
pub fn uniform_grid(period: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| k as f64 * period).collect()
}
