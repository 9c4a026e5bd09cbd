//! Continuous validation of a gantry-crane digital twin against its
//! (simulated) physical counterpart.

pub mod bus;
pub mod error;
pub mod estimation;
pub mod fmt;
pub mod metrics;
pub mod plant;
pub mod replication;
pub mod rng;
pub mod scenario;
pub mod store;
pub mod trace;
pub mod trajectory;
pub mod validator;

pub use error::{Error, Result};
pub use plant::{CraneParams, FaultKind, FaultSpec, SimulationOptions};
pub use trace::{Quantity, RunId, Trace, TraceKind, TraceSet};
