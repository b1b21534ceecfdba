//! The routing state machine.
//!
//! [`RoutingNode`] is sans-IO: every entry point takes the current time and
//! battery level in a [`NodeCtx`] and returns the [`Action`]s the host must
//! carry out. The same machine runs both protocols; [`Protocol`] switches off
//! the power gate, virtual-node learning and scored repair for the baseline.

mod buffer;
mod message;
mod node;
mod repair;
mod table;

use std::fmt;
use std::str::FromStr;

pub use buffer::PendingBuffer;
pub use message::{
    Beacon, DataPacket, ProtocolMessage, RouteAdvert, RouteError, RouteReply, RouteRequest,
};
pub use node::{Action, DropReason, NodeCtx, NodeStats, RoutingNode, Timer};
pub use repair::{
    baseline_repair_ttl, compute_eq1, rank_repair_candidates, repair_ttl, select_repair_next_hop,
    RepairCandidate, RepairContext,
};
pub use table::{RouteEntry, RouteOffer, RouteState, RouteTable, RouteUpdate, VirtualNodeRecord};

use crate::energy::ZoneThresholds;
use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Srvnp,
    AodvBaseline,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Srvnp => "srvnp",
            Protocol::AodvBaseline => "aodv_baseline",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "srvnp" => Ok(Protocol::Srvnp),
            "aodv_baseline" | "aodv" => Ok(Protocol::AodvBaseline),
            other => Err(format!(
                "unknown protocol `{other}` (expected srvnp or aodv_baseline)"
            )),
        }
    }
}

/// Protocol tunables shared by every node of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingConfig {
    pub protocol: Protocol,
    pub zones: ZoneThresholds,
    pub active_route_timeout: SimTime,
    pub vn_refresh_interval: SimTime,
    pub max_repair_distance: u32,
    pub repair_discovery_period: SimTime,
    pub discovery_timeout: SimTime,
    pub rreq_retries: u32,
    pub net_diameter: u32,
    pub buffer_capacity: usize,
    pub max_data_hops: u32,
    pub maintenance_interval: SimTime,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            protocol: Protocol::Srvnp,
            zones: ZoneThresholds::default(),
            active_route_timeout: SimTime::from_secs(3),
            vn_refresh_interval: SimTime::from_secs(1),
            max_repair_distance: 5,
            repair_discovery_period: SimTime::from_millis(200),
            discovery_timeout: SimTime::from_millis(500),
            rreq_retries: 2,
            net_diameter: 35,
            buffer_capacity: 64,
            max_data_hops: 64,
            maintenance_interval: SimTime::from_millis(250),
        }
    }
}
