//! Node placement, random-waypoint mobility and the unit-disk link layer.

use thiserror::Error;

use crate::kernel::{SimRng, SimTime};
use crate::routing::ProtocolMessage;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangle `[0, width] x [0, height]` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_point(&self, rng: &mut SimRng) -> Position {
        // Intervals are validated by the scenario parser.
        let x = rng.rand_uniform(0.0, self.width).expect("area width");
        let y = rng.rand_uniform(0.0, self.height).expect("area height");
        Position { x, y }
    }
}

/// Unit-disk connectivity with an inclusive boundary.
pub fn in_range(a: &Position, b: &Position, radio_range: f64) -> bool {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy <= radio_range * radio_range
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointParams {
    pub area: Area,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause: SimTime,
}

/// Random-waypoint state of one node.
///
/// A node at its waypoint with `paused_until > now` is pausing; once the pause
/// ends it draws a fresh waypoint and speed and starts moving.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityState {
    pub pos: Position,
    pub waypoint: Position,
    /// Meters per second.
    pub speed: f64,
    pub paused_until: SimTime,
}

impl MobilityState {
    /// A node resting at `pos` until `until`.
    pub fn resting(pos: Position, until: SimTime) -> Self {
        MobilityState {
            pos,
            waypoint: pos,
            speed: 0.0,
            paused_until: until,
        }
    }

    fn at_waypoint(&self) -> bool {
        self.pos == self.waypoint
    }

    fn draw_leg(&mut self, params: &WaypointParams, rng: &mut SimRng) {
        self.waypoint = params.area.random_point(rng);
        self.speed = rng
            .rand_uniform(params.speed_min, params.speed_max)
            .expect("speed interval");
    }

    /// Advances the node from `now` by `dt`. The trajectory does not depend
    /// on how a span of time is split into steps.
    pub fn step_waypoint(
        &self,
        now: SimTime,
        dt: SimTime,
        params: &WaypointParams,
        rng: &mut SimRng,
    ) -> MobilityState {
        let mut m = self.clone();
        let end = now + dt;
        let mut t = now;
        // Bounded: each iteration either ends the step or completes a leg or pause.
        while t < end {
            if m.at_waypoint() {
                if m.paused_until >= end {
                    break;
                }
                if m.paused_until > t {
                    t = m.paused_until;
                }
                m.draw_leg(params, rng);
                continue;
            }
            if m.speed <= 0.0 {
                break;
            }
            let remaining = (end - t).as_secs_f64();
            let dist = m.pos.distance(&m.waypoint);
            let needed = dist / m.speed;
            if needed <= remaining {
                let arrive = (t + SimTime::from_secs_f64(needed)).min(end);
                m.pos = m.waypoint;
                m.paused_until = arrive + params.pause;
                t = arrive;
                if params.pause == SimTime::ZERO && t == end {
                    // Arrived exactly at the end of the step: draw now so the
                    // node never idles at a waypoint with zero pause.
                    m.draw_leg(params, rng);
                }
            } else {
                let frac = (m.speed * remaining) / dist;
                m.pos = Position {
                    x: m.pos.x + (m.waypoint.x - m.pos.x) * frac,
                    y: m.pos.y + (m.waypoint.y - m.pos.y) * frac,
                };
                break;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Unicast(NodeId),
    Broadcast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: Destination,
    pub body: ProtocolMessage,
    /// Bytes on air; always positive.
    pub size: u32,
}

impl Frame {
    pub fn new(src: NodeId, dst: Destination, body: ProtocolMessage) -> Self {
        let size = body.size_bytes();
        Frame {
            src,
            dst,
            body,
            size,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unicast from node {0} to itself")]
    SelfUnicast(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeliveryOutcome {
    /// The addressee receives the frame at `at`; every other in-range node
    /// receives an overheard copy at the same time.
    Delivered { at: SimTime, overhearers: Vec<NodeId> },
    /// The addressee was out of range; reported back to the sender at once.
    LinkBreak,
}

/// Shared broadcast medium over a unit-disk graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub range: f64,
    pub hop_latency: SimTime,
}

impl Medium {
    /// Nodes other than `src` that are up and within range of `src`, in id order.
    pub fn neighbors(&self, positions: &[Position], up: &[bool], src: NodeId) -> Vec<NodeId> {
        let Some(origin) = positions.get(src.index()) else {
            return Vec::new();
        };
        positions
            .iter()
            .enumerate()
            .filter(|(i, p)| *i != src.index() && up[*i] && in_range(origin, p, self.range))
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }

    pub fn unicast(
        &self,
        positions: &[Position],
        up: &[bool],
        src: NodeId,
        dst: NodeId,
        now: SimTime,
    ) -> Result<DeliveryOutcome, RadioError> {
        if src.index() >= positions.len() {
            return Err(RadioError::UnknownNode(src));
        }
        if dst.index() >= positions.len() {
            return Err(RadioError::UnknownNode(dst));
        }
        if src == dst {
            return Err(RadioError::SelfUnicast(src));
        }
        let reachable = up[src.index()]
            && up[dst.index()]
            && in_range(&positions[src.index()], &positions[dst.index()], self.range);
        if !reachable {
            return Ok(DeliveryOutcome::LinkBreak);
        }
        let overhearers = self
            .neighbors(positions, up, src)
            .into_iter()
            .filter(|n| *n != dst)
            .collect();
        Ok(DeliveryOutcome::Delivered {
            at: now + self.hop_latency,
            overhearers,
        })
    }

    pub fn local_broadcast(&self, positions: &[Position], up: &[bool], src: NodeId) -> Vec<NodeId> {
        if !up.get(src.index()).copied().unwrap_or(false) {
            return Vec::new();
        }
        self.neighbors(positions, up, src)
    }
}
