use crate::kernel::SimTime;
use crate::{FlowId, NodeId};

/// Route request, flooded during discovery and scoped during local repair.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteRequest {
    pub id: u32,
    pub origin: NodeId,
    pub origin_seq: u32,
    pub dest: NodeId,
    /// Last destination sequence number known to the origin, if any.
    pub dest_seq: Option<u32>,
    /// Hops travelled so far; the origin sends 0.
    pub hop_count: u32,
    pub ttl: u32,
    /// Minimum battery level over the origin and every relay so far.
    pub path_min_power: f64,
    /// Set on local-repair requests; answered with an RRpr instead of an RRep.
    pub repair: bool,
}

/// Body shared by RRep and RRpr.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteReply {
    /// Originator of the request being answered.
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seq: u32,
    /// The transmitter's own hop distance to `dest`.
    pub hop_count: u32,
    pub lifetime: SimTime,
    pub path_min_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteError {
    pub unreachable: Vec<(NodeId, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub flow: FlowId,
    pub seq: u32,
    pub origin: NodeId,
    pub dest: NodeId,
    pub payload_bytes: u32,
    /// Set on the one-hop broadcast made by a node that just lost its next hop.
    pub alternate_candidate: bool,
    /// Set once the packet has been sent to an overheard alternate; it is
    /// not detoured a second time.
    pub detoured: bool,
    /// Hops travelled so far.
    pub hops: u32,
    /// End-to-end acknowledgement (only used by the retransmission mode).
    pub ack: bool,
}

/// One route a neighbour can offer, as carried in its beacon.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteAdvert {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub vn_count: u32,
}

/// Periodic one-hop beacon: battery level plus the routes the sender could
/// serve as an alternate for.
#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    pub power: f64,
    pub routes: Vec<RouteAdvert>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    RReq(RouteRequest),
    RRep(RouteReply),
    RRpr(RouteReply),
    Err(RouteError),
    Data(DataPacket),
    Beacon(Beacon),
}

const HEADER_BYTES: u32 = 20;

impl ProtocolMessage {
    pub fn size_bytes(&self) -> u32 {
        match self {
            ProtocolMessage::RReq(_) => HEADER_BYTES + 28,
            ProtocolMessage::RRep(_) | ProtocolMessage::RRpr(_) => HEADER_BYTES + 24,
            ProtocolMessage::Err(e) => HEADER_BYTES + 4 + 8 * e.unreachable.len() as u32,
            ProtocolMessage::Data(d) => HEADER_BYTES + 16 + d.payload_bytes,
            ProtocolMessage::Beacon(b) => HEADER_BYTES + 4 + 16 * b.routes.len() as u32,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::RReq(_) => "RREQ",
            ProtocolMessage::RRep(_) => "RREP",
            ProtocolMessage::RRpr(_) => "RRPR",
            ProtocolMessage::Err(_) => "ERR",
            ProtocolMessage::Data(_) => "DATA",
            ProtocolMessage::Beacon(_) => "BEACON",
        }
    }
}
