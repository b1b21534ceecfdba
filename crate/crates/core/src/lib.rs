//! Stable, power-aware on-demand routing for wireless sensor networks.
//!
//! The crate is a deterministic discrete-event simulator together with a
//! sans-IO routing library. The routing state machine ([`routing`]) combines
//! AODV-style route discovery with three additions: nodes whose battery has
//! left the active zone refuse to relay discovery floods, neighbours whose
//! beacons advertise a route to a destination are tracked as *virtual nodes*
//! (overheard replies and data add one-hop alternates), and a link break
//! triggers a one-hop salvage broadcast plus a local repair whose scope and
//! first hop are scored by [`routing::compute_eq1`]. An AODV-like baseline runs
//! behind the same interface.
//!
//! Module map:
//!
//! - [`kernel`]: event scheduler, simulation clock and seeded RNG streams.
//! - [`radio`]: positions, random-waypoint mobility, unit-disk links.
//! - [`energy`]: batteries, drain and power-zone classification.
//! - [`routing`]: the protocol state machine.
//! - [`metrics`]: CBR traffic and delivery ratio / delay / throughput.
//! - [`scenario`], [`sim`], [`sweep`], [`fixtures`], [`trace`]: the harness.

use std::fmt;

pub mod energy;
pub mod fixtures;
pub mod kernel;
pub mod metrics;
pub mod radio;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod trace;

pub use kernel::{SimRng, SimTime};
pub use routing::Protocol;
pub use scenario::ScenarioConfig;
pub use sim::{run_scenario, RunResult, Simulation};

/// Identifier of a sensor node; dense indices `0..node_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of a traffic flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
