use std::collections::{BTreeMap, HashMap};

use super::buffer::PendingBuffer;
use super::message::{
    Beacon, DataPacket, ProtocolMessage, RouteAdvert, RouteError, RouteReply, RouteRequest,
};
use super::repair::{
    baseline_repair_ttl, compute_eq1, rank_repair_candidates, repair_ttl, RepairCandidate,
    RepairContext,
};
use super::table::{RouteOffer, RouteState, RouteTable, VirtualNodeRecord};
use super::{Protocol, RoutingConfig};
use crate::energy::PowerZone;
use crate::kernel::{SimRng, SimTime};
use crate::trace::{TraceEvent, TraceKind};
use crate::NodeId;

/// How long `(origin, id)` pairs are remembered for duplicate suppression.
const SEEN_LIFETIME: SimTime = SimTime::from_secs(10);

/// What the host knows about the node at call time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCtx {
    pub now: SimTime,
    /// Current battery level on the 0–10 scale.
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timer {
    Discovery { dest: NodeId, rreq_id: u32 },
    Repair { dest: NodeId, rreq_id: u32 },
    Beacon,
    Maintenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NoRoute,
    HopLimit,
    BufferOverflow,
    RepairFailed,
    LinkBreak,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::NoRoute => "no_route",
            DropReason::HopLimit => "hop_limit",
            DropReason::BufferOverflow => "buffer_overflow",
            DropReason::RepairFailed => "repair_failed",
            DropReason::LinkBreak => "link_break",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Broadcast(ProtocolMessage),
    Unicast { to: NodeId, msg: ProtocolMessage },
    SetTimer { after: SimTime, timer: Timer },
    /// Data addressed to this node.
    Deliver(DataPacket),
    Drop { pkt: DataPacket, reason: DropReason },
    Trace(TraceEvent),
}

/// Counters the host reads after a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub stale_replies: u64,
    pub orphan_replies: u64,
    pub salvage_broadcasts: u64,
    pub salvage_forwards: u64,
    pub alternate_forwards: u64,
}

#[derive(Debug, Clone)]
struct Neighbor {
    power: f64,
    heard_at: SimTime,
    routes: BTreeMap<NodeId, RouteAdvert>,
}

/// A route through a neighbour learned by overhearing its replies.
#[derive(Debug, Clone)]
struct Alternate {
    hop_count: u32,
    dest_seq: u32,
    expires_at: SimTime,
}

#[derive(Debug, Clone)]
struct Discovery {
    rreq_id: u32,
    attempt: u32,
}

#[derive(Debug, Clone)]
struct Repair {
    rreq_id: u32,
    invalid_hops: u32,
    request: RouteRequest,
    remaining: Vec<RepairCandidate>,
}

type Out = Vec<Action>;

fn trace(out: &mut Out, ev: TraceEvent) {
    out.push(Action::Trace(ev));
}

/// One node's protocol instance.
#[derive(Debug, Clone)]
pub struct RoutingNode {
    id: NodeId,
    cfg: RoutingConfig,
    own_seq: u32,
    next_rreq_id: u32,
    table: RouteTable,
    buffer: PendingBuffer,
    seen: HashMap<(NodeId, u32), SimTime>,
    /// Best `(hops, -power)` answered so far per request, at the destination.
    answered: HashMap<(NodeId, u32), (u32, f64)>,
    neighbors: BTreeMap<NodeId, Neighbor>,
    alternates: BTreeMap<NodeId, BTreeMap<NodeId, Alternate>>,
    discoveries: BTreeMap<NodeId, Discovery>,
    repairs: BTreeMap<NodeId, Repair>,
    rng: SimRng,
    stats: NodeStats,
}

impl RoutingNode {
    pub fn new(id: NodeId, cfg: RoutingConfig, rng: SimRng) -> Self {
        let buffer = PendingBuffer::new(cfg.buffer_capacity);
        RoutingNode {
            id,
            cfg,
            own_seq: 0,
            next_rreq_id: 0,
            table: RouteTable::new(),
            buffer,
            seen: HashMap::new(),
            answered: HashMap::new(),
            neighbors: BTreeMap::new(),
            alternates: BTreeMap::new(),
            discoveries: BTreeMap::new(),
            repairs: BTreeMap::new(),
            rng,
            stats: NodeStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.cfg
    }

    pub fn table(&self) -> &RouteTable {
        &self.table
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn buffered(&self, dest: NodeId) -> usize {
        self.buffer.len(dest)
    }

    pub fn is_repairing(&self, dest: NodeId) -> bool {
        self.repairs.contains_key(&dest)
    }

    /// Next hops of live overheard alternates toward `dest`.
    pub fn alternates(&self, dest: NodeId, now: SimTime) -> Vec<NodeId> {
        self.alternates
            .get(&dest)
            .map(|m| {
                m.iter()
                    .filter(|(_, a)| a.expires_at > now)
                    .map(|(n, _)| *n)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Destinations whose Active route was (re)installed since the last call.
    pub fn take_route_changes(&mut self) -> Vec<NodeId> {
        self.table.take_changes()
    }

    fn srvnp(&self) -> bool {
        self.cfg.protocol == Protocol::Srvnp
    }

    fn zone(&self, ctx: &NodeCtx) -> PowerZone {
        self.cfg.zones.zone_of(ctx.power)
    }

    fn lifetime(&self, now: SimTime) -> SimTime {
        now + self.cfg.active_route_timeout
    }

    fn neighbor_stale_after(&self) -> SimTime {
        SimTime::from_micros(2 * self.cfg.vn_refresh_interval.as_micros())
    }

    fn neighbor_live(&self, n: NodeId, now: SimTime) -> bool {
        let stale = self.neighbor_stale_after();
        self.neighbors
            .get(&n)
            .is_some_and(|nb| nb.heard_at + stale > now)
    }

    /// Arms the periodic timers. Call once when the node comes up.
    pub fn start(&mut self, _ctx: NodeCtx) -> Vec<Action> {
        let mut out = vec![Action::SetTimer {
            after: self.cfg.maintenance_interval,
            timer: Timer::Maintenance,
        }];
        if self.srvnp() {
            let first = self.beacon_jitter(0.0, 1.0);
            out.push(Action::SetTimer {
                after: first,
                timer: Timer::Beacon,
            });
        }
        out
    }

    fn beacon_jitter(&mut self, lo: f64, hi: f64) -> SimTime {
        let f = self.rng.rand_uniform(lo, hi).unwrap_or(lo);
        let us = (self.cfg.vn_refresh_interval.as_micros() as f64 * f).round() as u64;
        SimTime::from_micros(us.max(1))
    }

    // ---- application side -------------------------------------------------

    /// Hands a locally generated packet to the routing layer.
    pub fn originate_data(&mut self, ctx: NodeCtx, mut pkt: DataPacket) -> Vec<Action> {
        let mut out = Vec::new();
        pkt.origin = self.id;
        pkt.hops = 0;
        pkt.alternate_candidate = false;
        self.forward_data(&ctx, None, pkt, &mut out);
        out
    }

    // ---- frame input ------------------------------------------------------

    /// A frame addressed to this node or broadcast.
    pub fn receive(&mut self, ctx: NodeCtx, from: NodeId, msg: &ProtocolMessage) -> Vec<Action> {
        let mut out = Vec::new();
        if let Some(nb) = self.neighbors.get_mut(&from) {
            nb.heard_at = nb.heard_at.max(ctx.now);
        }
        match msg {
            ProtocolMessage::RReq(r) => self.handle_rreq(&ctx, from, r, &mut out),
            ProtocolMessage::RRep(r) => self.handle_reply(&ctx, from, r, false, &mut out),
            ProtocolMessage::RRpr(r) => self.handle_reply(&ctx, from, r, true, &mut out),
            ProtocolMessage::Err(e) => self.handle_err(&ctx, from, e, &mut out),
            ProtocolMessage::Data(d) if d.alternate_candidate => {
                self.handle_salvage(&ctx, from, d, &mut out)
            }
            ProtocolMessage::Data(d) => self.forward_data(&ctx, Some(from), d.clone(), &mut out),
            ProtocolMessage::Beacon(b) => self.handle_beacon(&ctx, from, b, &mut out),
        }
        out
    }

    /// A unicast frame between two other nodes, heard promiscuously.
    pub fn overhear(
        &mut self,
        ctx: NodeCtx,
        from: NodeId,
        _to: NodeId,
        msg: &ProtocolMessage,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        if !self.srvnp() || from == self.id {
            return out;
        }
        if let Some(nb) = self.neighbors.get_mut(&from) {
            nb.heard_at = nb.heard_at.max(ctx.now);
        }
        match msg {
            ProtocolMessage::RRep(r) | ProtocolMessage::RRpr(r) if r.dest != self.id => {
                let expires_at = self.lifetime(ctx.now);
                let alts = self.alternates.entry(r.dest).or_default();
                let fresh = alts.get(&from).is_none_or(|a| a.expires_at <= ctx.now);
                alts.insert(
                    from,
                    Alternate {
                        hop_count: r.hop_count + 1,
                        dest_seq: r.dest_seq,
                        expires_at,
                    },
                );
                if fresh {
                    trace(
                        &mut out,
                        TraceEvent::new(TraceKind::VnAdd)
                            .with("dest", r.dest)
                            .with("vn", from)
                            .with("role", "alt")
                            .with("hops", r.hop_count + 1),
                    );
                }
            }
            ProtocolMessage::Data(d) if !d.ack && d.dest != self.id && !d.alternate_candidate && !d.detoured => {
                // A neighbour forwarding data has a live route to its
                // destination. The length is unknown, so assume the
                // repair horizon.
                let expires_at = self.lifetime(ctx.now);
                let alts = self.alternates.entry(d.dest).or_default();
                match alts.get_mut(&from) {
                    Some(a) if a.expires_at > ctx.now => a.expires_at = a.expires_at.max(expires_at),
                    _ => {
                        let hop_count = self.cfg.max_repair_distance;
                        alts.insert(
                            from,
                            Alternate {
                                hop_count,
                                dest_seq: 0,
                                expires_at,
                            },
                        );
                        trace(
                            &mut out,
                            TraceEvent::new(TraceKind::VnAdd)
                                .with("dest", d.dest)
                                .with("vn", from)
                                .with("role", "alt")
                                .with("hops", hop_count),
                        );
                    }
                }
            }
            _ => {}
        }
        out
    }

    /// The link layer could not deliver a unicast frame to `to`.
    pub fn unicast_failed(
        &mut self,
        ctx: NodeCtx,
        to: NodeId,
        msg: &ProtocolMessage,
    ) -> Vec<Action> {
        let mut out = Vec::new();
        match msg {
            ProtocolMessage::Data(d) => self.on_link_break(&ctx, to, Some(d.clone()), &mut out),
            ProtocolMessage::RReq(r) if r.repair && r.origin == self.id => {
                self.on_link_break(&ctx, to, None, &mut out);
                self.retry_repair(&ctx, r.dest, r.id, &mut out);
            }
            _ => self.on_link_break(&ctx, to, None, &mut out),
        }
        out
    }

    pub fn timer(&mut self, ctx: NodeCtx, timer: Timer) -> Vec<Action> {
        let mut out = Vec::new();
        match timer {
            Timer::Discovery { dest, rreq_id } => self.discovery_timeout(&ctx, dest, rreq_id, &mut out),
            Timer::Repair { dest, rreq_id } => {
                if self.repairs.get(&dest).is_some_and(|r| r.rreq_id == rreq_id) {
                    self.fail_repair(&ctx, dest, &mut out);
                }
            }
            Timer::Beacon => self.send_beacon(&ctx, &mut out),
            Timer::Maintenance => {
                self.expire_routes(&ctx, &mut out);
                out.push(Action::SetTimer {
                    after: self.cfg.maintenance_interval,
                    timer: Timer::Maintenance,
                });
            }
        }
        out
    }

    // ---- discovery --------------------------------------------------------

    fn discover(&mut self, ctx: &NodeCtx, dest: NodeId, out: &mut Out) {
        if self.discoveries.contains_key(&dest) {
            return;
        }
        self.send_discovery(ctx, dest, 0, out);
    }

    fn send_discovery(&mut self, ctx: &NodeCtx, dest: NodeId, attempt: u32, out: &mut Out) {
        self.next_rreq_id += 1;
        self.own_seq += 1;
        let id = self.next_rreq_id;
        let r = RouteRequest {
            id,
            origin: self.id,
            origin_seq: self.own_seq,
            dest,
            dest_seq: self.table.get(dest).map(|e| e.dest_seq),
            hop_count: 0,
            ttl: self.cfg.net_diameter,
            path_min_power: ctx.power,
            repair: false,
        };
        self.seen.insert((self.id, id), ctx.now);
        trace(
            out,
            TraceEvent::new(TraceKind::RreqTx)
                .with("origin", self.id)
                .with("id", id)
                .with("dest", dest)
                .with("ttl", r.ttl)
                .with("fwd", 0),
        );
        out.push(Action::Broadcast(ProtocolMessage::RReq(r)));
        let wait = SimTime::from_micros(self.cfg.discovery_timeout.as_micros() << attempt.min(16));
        out.push(Action::SetTimer {
            after: wait,
            timer: Timer::Discovery { dest, rreq_id: id },
        });
        self.discoveries.insert(dest, Discovery { rreq_id: id, attempt });
    }

    fn discovery_timeout(&mut self, ctx: &NodeCtx, dest: NodeId, rreq_id: u32, out: &mut Out) {
        let Some(d) = self.discoveries.get(&dest) else {
            return;
        };
        if d.rreq_id != rreq_id {
            return;
        }
        let attempt = d.attempt;
        self.discoveries.remove(&dest);
        if self.table.active(dest, ctx.now).is_some() {
            self.flush(ctx, dest, out);
        } else if attempt < self.cfg.rreq_retries {
            self.send_discovery(ctx, dest, attempt + 1, out);
        } else {
            for pkt in self.buffer.take(dest) {
                out.push(Action::Drop {
                    pkt,
                    reason: DropReason::NoRoute,
                });
            }
        }
    }

    fn handle_rreq(&mut self, ctx: &NodeCtx, from: NodeId, r: &RouteRequest, out: &mut Out) {
        if r.ttl == 0 || r.origin == self.id {
            return;
        }
        let key = (r.origin, r.id);
        let dup = self.seen.contains_key(&key);
        if !dup {
            self.seen.insert(key, ctx.now);
        }
        // Backward learning; the update rule keeps only the better copy.
        self.table.offer(
            RouteOffer {
                dest: r.origin,
                next_hop: from,
                hop_count: r.hop_count + 1,
                dest_seq: r.origin_seq,
                path_min_power: r.path_min_power,
                expires_at: self.lifetime(ctx.now),
            },
            ctx.now,
        );

        if r.dest == self.id {
            let rank = (r.hop_count, -r.path_min_power);
            let better = match self.answered.get(&key) {
                None => true,
                Some(&(h, p)) => rank.0 < h || (rank.0 == h && rank.1 < p),
            };
            if !better {
                trace(
                    out,
                    TraceEvent::new(TraceKind::RreqDropDup)
                        .with("origin", r.origin)
                        .with("id", r.id),
                );
                return;
            }
            // A fresh number for each new request, so the reply beats any
            // invalidated (and therefore bumped) entry along the way back.
            if !self.answered.contains_key(&key) {
                self.own_seq = self.own_seq.max(r.dest_seq.unwrap_or(0)) + 1;
            }
            self.answered.insert(key, rank);
            let reply = RouteReply {
                origin: r.origin,
                dest: self.id,
                dest_seq: self.own_seq,
                hop_count: 0,
                lifetime: self.cfg.active_route_timeout,
                path_min_power: r.path_min_power,
            };
            self.send_reply(reply, r.repair, from, out);
            return;
        }

        if dup {
            trace(
                out,
                TraceEvent::new(TraceKind::RreqDropDup)
                    .with("origin", r.origin)
                    .with("id", r.id),
            );
            return;
        }

        let fresh = self.table.active(r.dest, ctx.now).filter(|e| {
            e.next_hop != from && r.dest_seq.is_none_or(|s| e.dest_seq >= s)
        });
        if let Some(e) = fresh {
            let reply = RouteReply {
                origin: r.origin,
                dest: r.dest,
                dest_seq: e.dest_seq,
                hop_count: e.hop_count,
                lifetime: e.expires_at.saturating_sub(ctx.now),
                path_min_power: r.path_min_power.min(e.path_min_power),
            };
            let next = e.next_hop;
            if let Some(fwd) = self.table.get_mut(r.dest) {
                fwd.precursors.insert(from);
            }
            if let Some(rev) = self.table.get_mut(r.origin) {
                rev.precursors.insert(next);
            }
            self.send_reply(reply, r.repair, from, out);
            return;
        }

        if self.srvnp() && self.zone(ctx) != PowerZone::Active {
            trace(
                out,
                TraceEvent::new(TraceKind::RreqDropPower)
                    .with("origin", r.origin)
                    .with("id", r.id)
                    .with("zone", self.zone(ctx).as_str()),
            );
            return;
        }
        if r.ttl <= 1 {
            return;
        }
        let fwd = RouteRequest {
            hop_count: r.hop_count + 1,
            ttl: r.ttl - 1,
            path_min_power: r.path_min_power.min(ctx.power),
            ..r.clone()
        };
        trace(
            out,
            TraceEvent::new(TraceKind::RreqTx)
                .with("origin", r.origin)
                .with("id", r.id)
                .with("dest", r.dest)
                .with("ttl", fwd.ttl)
                .with("fwd", 1),
        );
        out.push(Action::Broadcast(ProtocolMessage::RReq(fwd)));
    }

    fn send_reply(&mut self, reply: RouteReply, repair: bool, to: NodeId, out: &mut Out) {
        let kind = if repair {
            TraceKind::RrprTx
        } else {
            TraceKind::RrepTx
        };
        trace(
            out,
            TraceEvent::new(kind)
                .with("origin", reply.origin)
                .with("dest", reply.dest)
                .with("seq", reply.dest_seq)
                .with("hops", reply.hop_count)
                .with("to", to),
        );
        let msg = if repair {
            ProtocolMessage::RRpr(reply)
        } else {
            ProtocolMessage::RRep(reply)
        };
        out.push(Action::Unicast { to, msg });
    }

    fn handle_reply(
        &mut self,
        ctx: &NodeCtx,
        from: NodeId,
        rep: &RouteReply,
        repair: bool,
        out: &mut Out,
    ) {
        if rep.dest == self.id {
            return;
        }
        let hops = rep.hop_count + 1;
        let update = self.table.offer(
            RouteOffer {
                dest: rep.dest,
                next_hop: from,
                hop_count: hops,
                dest_seq: rep.dest_seq,
                path_min_power: rep.path_min_power,
                expires_at: self.lifetime(ctx.now),
            },
            ctx.now,
        );
        if !update.accepted() {
            self.stats.stale_replies += 1;
            return;
        }
        if self.srvnp() {
            self.drop_vn(rep.dest, from, "primary", out);
        }
        if rep.origin == self.id {
            self.discoveries.remove(&rep.dest);
            if let Some(r) = self.repairs.remove(&rep.dest) {
                trace(
                    out,
                    TraceEvent::new(TraceKind::RepairOk)
                        .with("dest", rep.dest)
                        .with("hops", hops)
                        .with("old", r.invalid_hops)
                        .with("longer", u8::from(hops > r.invalid_hops))
                        .with("via", from),
                );
            }
            self.flush(ctx, rep.dest, out);
            return;
        }
        let Some(rev) = self.table.active(rep.origin, ctx.now) else {
            self.stats.orphan_replies += 1;
            return;
        };
        let upstream = rev.next_hop;
        if let Some(fwd) = self.table.get_mut(rep.dest) {
            fwd.precursors.insert(upstream);
        }
        if let Some(rev) = self.table.get_mut(rep.origin) {
            rev.precursors.insert(from);
        }
        let relayed = RouteReply {
            hop_count: hops,
            ..rep.clone()
        };
        self.send_reply(relayed, repair, upstream, out);
    }

    // ---- data -------------------------------------------------------------

    fn push_buffer(&mut self, dest: NodeId, pkt: DataPacket, out: &mut Out) {
        if let Some(old) = self.buffer.push(dest, pkt) {
            out.push(Action::Drop {
                pkt: old,
                reason: DropReason::BufferOverflow,
            });
        }
    }

    fn flush(&mut self, ctx: &NodeCtx, dest: NodeId, out: &mut Out) {
        for pkt in self.buffer.take(dest) {
            self.forward_data(ctx, None, pkt, out);
        }
    }

    fn forward_data(&mut self, ctx: &NodeCtx, from: Option<NodeId>, mut pkt: DataPacket, out: &mut Out) {
        if pkt.dest == self.id {
            out.push(Action::Deliver(pkt));
            return;
        }
        if pkt.hops >= self.cfg.max_data_hops {
            out.push(Action::Drop {
                pkt,
                reason: DropReason::HopLimit,
            });
            return;
        }
        let lifetime = self.lifetime(ctx.now);
        if let Some(e) = self.table.active_mut(pkt.dest, ctx.now) {
            e.expires_at = e.expires_at.max(lifetime);
            if let Some(f) = from {
                e.precursors.insert(f);
            }
            let next = e.next_hop;
            if let Some(f) = from {
                if let Some(rev) = self.table.active_mut(pkt.origin, ctx.now) {
                    if rev.next_hop == f {
                        rev.expires_at = rev.expires_at.max(lifetime);
                    }
                }
            }
            pkt.hops += 1;
            out.push(Action::Unicast {
                to: next,
                msg: ProtocolMessage::Data(pkt),
            });
            return;
        }
        let dest = pkt.dest;
        if self.repairs.contains_key(&dest) {
            self.push_buffer(dest, pkt, out);
            return;
        }
        if pkt.origin == self.id {
            self.push_buffer(dest, pkt, out);
            self.discover(ctx, dest, out);
            return;
        }
        if self.srvnp() && !pkt.detoured {
            if let Some(next) = self.best_alternate(dest, ctx.now, from) {
                self.stats.alternate_forwards += 1;
                pkt.hops += 1;
                pkt.detoured = true;
                out.push(Action::Unicast {
                    to: next,
                    msg: ProtocolMessage::Data(pkt),
                });
                // The detour only carries this packet; upstream still has to rediscover.
                let seq = self.table.get(dest).map_or(0, |e| e.dest_seq);
                self.send_err(vec![(dest, seq)], out);
                return;
            }
        }
        let seq = self.table.get(dest).map_or(0, |e| e.dest_seq);
        out.push(Action::Drop {
            pkt,
            reason: DropReason::NoRoute,
        });
        self.send_err(vec![(dest, seq)], out);
    }

    fn best_alternate(&self, dest: NodeId, now: SimTime, exclude: Option<NodeId>) -> Option<NodeId> {
        let alts = self.alternates.get(&dest)?;
        alts.iter()
            .filter(|(n, a)| {
                a.expires_at > now && Some(**n) != exclude && self.neighbor_live(**n, now)
            })
            .max_by(|(na, a), (nb, b)| {
                a.dest_seq
                    .cmp(&b.dest_seq)
                    .then(b.hop_count.cmp(&a.hop_count))
                    .then(nb.cmp(na))
            })
            .map(|(n, _)| *n)
    }

    /// A neighbour's one-hop broadcast of a packet whose next hop vanished.
    fn handle_salvage(&mut self, ctx: &NodeCtx, from: NodeId, d: &DataPacket, out: &mut Out) {
        if d.dest == self.id {
            let mut pkt = d.clone();
            pkt.alternate_candidate = false;
            out.push(Action::Deliver(pkt));
            return;
        }
        if !self.srvnp() || self.zone(ctx) != PowerZone::Active || d.hops >= self.cfg.max_data_hops {
            return;
        }
        let mut pkt = d.clone();
        pkt.alternate_candidate = false;
        let primary = self
            .table
            .active(d.dest, ctx.now)
            .filter(|e| e.next_hop != from)
            .map(|e| e.next_hop);
        let next = match primary {
            Some(n) => n,
            None if d.detoured => return,
            None => match self.best_alternate(d.dest, ctx.now, Some(from)) {
                Some(n) => {
                    pkt.detoured = true;
                    n
                }
                None => return,
            },
        };
        self.stats.salvage_forwards += 1;
        pkt.hops += 1;
        out.push(Action::Unicast {
            to: next,
            msg: ProtocolMessage::Data(pkt),
        });
    }

    // ---- link breaks, repair and errors -----------------------------------

    fn send_err(&mut self, unreachable: Vec<(NodeId, u32)>, out: &mut Out) {
        if unreachable.is_empty() {
            return;
        }
        let dests: Vec<String> = unreachable.iter().map(|(d, _)| d.to_string()).collect();
        trace(
            out,
            TraceEvent::new(TraceKind::ErrTx).with("dests", dests.join(",")),
        );
        out.push(Action::Broadcast(ProtocolMessage::Err(RouteError {
            unreachable,
        })));
    }

    fn on_link_break(&mut self, ctx: &NodeCtx, broken: NodeId, data: Option<DataPacket>, out: &mut Out) {
        let mut ev = TraceEvent::new(TraceKind::LinkBreak).with("next_hop", broken);
        if let Some(d) = &data {
            ev = ev.with("dest", d.dest);
        }
        trace(out, ev);
        self.forget_neighbor(broken, "link_break", out);
        let invalidated = self.table.invalidate_via(broken, ctx.now);
        let mut repairing = None;

        if let Some(mut pkt) = data {
            let dest = pkt.dest;
            let my_hops = pkt.hops.saturating_sub(1);
            if self.srvnp() && pkt.origin != self.id {
                self.stats.salvage_broadcasts += 1;
                let mut copy = pkt.clone();
                copy.alternate_candidate = true;
                out.push(Action::Broadcast(ProtocolMessage::Data(copy)));
            }
            pkt.hops = my_hops;
            if pkt.origin == self.id {
                self.push_buffer(dest, pkt, out);
                self.discover(ctx, dest, out);
            } else if self.repairs.contains_key(&dest) {
                self.push_buffer(dest, pkt, out);
            } else if self.can_repair(ctx, dest) {
                self.push_buffer(dest, pkt, out);
                self.start_local_repair(ctx, dest, my_hops, out);
                repairing = Some(dest);
            } else {
                out.push(Action::Drop {
                    pkt,
                    reason: DropReason::LinkBreak,
                });
            }
        }

        let mut errs = Vec::new();
        for (d, seq, has_precursors) in invalidated {
            if !has_precursors || Some(d) == repairing || self.repairs.contains_key(&d) {
                continue;
            }
            // Other flows through the lost hop get repaired too when a virtual node is known.
            if self.srvnp() && self.can_repair(ctx, d) {
                self.start_local_repair(ctx, d, 0, out);
                if self.repairs.contains_key(&d) {
                    continue;
                }
            }
            errs.push((d, seq));
        }
        self.send_err(errs, out);
    }

    fn can_repair(&self, ctx: &NodeCtx, dest: NodeId) -> bool {
        let Some(e) = self.table.get(dest) else {
            return false;
        };
        if e.last_known_hop_count > self.cfg.max_repair_distance {
            return false;
        }
        !self.srvnp() || !self.repair_candidates(ctx.now, dest).is_empty()
    }

    /// Active virtual nodes for `dest` whose own route does not run back
    /// through this node, best first.
    fn repair_candidates(&self, now: SimTime, dest: NodeId) -> Vec<RepairCandidate> {
        rank_repair_candidates(&self.virtual_node_candidates(now, dest))
    }

    /// Fresh, live virtual nodes for `dest` whose own route does not run back
    /// through this node, in any power zone and unranked.
    pub fn virtual_node_candidates(&self, now: SimTime, dest: NodeId) -> Vec<RepairCandidate> {
        let Some(e) = self.table.get(dest) else {
            return Vec::new();
        };
        let stale = self.neighbor_stale_after();
        e.virtual_nodes
            .iter()
            .filter(|v| {
                v.next_hop != Some(self.id)
                    && v.refreshed_at + stale > now
                    && self.neighbor_live(v.node, now)
            })
            .map(|v| RepairCandidate {
                node: v.node,
                ctx: RepairContext {
                    min_rpr_ttl: v.hop_count,
                    vn_count: v.vn_count,
                    hops_to_sender: 1,
                    power: v.power,
                },
                zone: self.cfg.zones.zone_of(v.power),
            })
            .collect()
    }

    fn start_local_repair(&mut self, ctx: &NodeCtx, dest: NodeId, hops_to_sender: u32, out: &mut Out) {
        let mut ranked = self.repair_candidates(ctx.now, dest);
        let Some(seq) = self.table.invalidate(dest, RouteState::UnderRepair) else {
            return;
        };
        let invalid_hops = self.table.get(dest).map_or(0, |e| e.last_known_hop_count);
        self.next_rreq_id += 1;
        self.own_seq += 1;
        let id = self.next_rreq_id;
        let mut request = RouteRequest {
            id,
            origin: self.id,
            origin_seq: self.own_seq,
            dest,
            dest_seq: Some(seq),
            hop_count: 0,
            ttl: 0,
            path_min_power: ctx.power,
            repair: true,
        };
        self.seen.insert((self.id, id), ctx.now);
        let mut ev = TraceEvent::new(TraceKind::RepairStart)
            .with("dest", dest)
            .with("id", id)
            .with("old", invalid_hops);
        if self.srvnp() {
            if ranked.is_empty() {
                return;
            }
            let first = ranked.remove(0);
            request.ttl = repair_ttl(&first.ctx);
            ev = ev
                .with("ttl", request.ttl)
                .with("via", first.node)
                .with("score", compute_eq1(&first.ctx));
            trace(out, ev);
            out.push(Action::Unicast {
                to: first.node,
                msg: ProtocolMessage::RReq(request.clone()),
            });
        } else {
            request.ttl = baseline_repair_ttl(invalid_hops, hops_to_sender);
            ev = ev.with("ttl", request.ttl).with("via", "bcast");
            trace(out, ev);
            out.push(Action::Broadcast(ProtocolMessage::RReq(request.clone())));
        }
        self.repairs.insert(
            dest,
            Repair {
                rreq_id: id,
                invalid_hops,
                request,
                remaining: ranked,
            },
        );
        out.push(Action::SetTimer {
            after: self.cfg.repair_discovery_period,
            timer: Timer::Repair { dest, rreq_id: id },
        });
    }

    /// The repair request could not reach the chosen virtual node; try the
    /// next one or give up.
    fn retry_repair(&mut self, ctx: &NodeCtx, dest: NodeId, rreq_id: u32, out: &mut Out) {
        let Some(rep) = self.repairs.get_mut(&dest) else {
            return;
        };
        if rep.rreq_id != rreq_id {
            return;
        }
        let now = ctx.now;
        let next = loop {
            if rep.remaining.is_empty() {
                break None;
            }
            let c = rep.remaining.remove(0);
            let live = self
                .neighbors
                .get(&c.node)
                .is_some_and(|nb| nb.heard_at + SimTime::from_micros(2 * self.cfg.vn_refresh_interval.as_micros()) > now);
            if live {
                break Some(c);
            }
        };
        match next {
            Some(c) => {
                let mut req = rep.request.clone();
                req.ttl = repair_ttl(&c.ctx);
                trace(
                    out,
                    TraceEvent::new(TraceKind::RepairStart)
                        .with("dest", dest)
                        .with("id", rreq_id)
                        .with("old", rep.invalid_hops)
                        .with("ttl", req.ttl)
                        .with("via", c.node)
                        .with("score", compute_eq1(&c.ctx))
                        .with("retry", 1),
                );
                out.push(Action::Unicast {
                    to: c.node,
                    msg: ProtocolMessage::RReq(req),
                });
            }
            None => self.fail_repair(ctx, dest, out),
        }
    }

    fn fail_repair(&mut self, ctx: &NodeCtx, dest: NodeId, out: &mut Out) {
        self.repairs.remove(&dest);
        trace(out, TraceEvent::new(TraceKind::RepairFail).with("dest", dest));
        for pkt in self.buffer.take(dest) {
            out.push(Action::Drop {
                pkt,
                reason: DropReason::RepairFailed,
            });
        }
        if self.table.active(dest, ctx.now).is_some() {
            return;
        }
        let seq = match self.table.get_mut(dest) {
            Some(e) => {
                e.state = RouteState::Invalid;
                e.dest_seq
            }
            None => 0,
        };
        self.clear_vns(dest, "repair_failed", out);
        self.send_err(vec![(dest, seq)], out);
    }

    fn handle_err(&mut self, ctx: &NodeCtx, from: NodeId, e: &RouteError, out: &mut Out) {
        let mut propagate = Vec::new();
        let mut rediscover = Vec::new();
        for &(dest, seq) in &e.unreachable {
            if self.srvnp() {
                self.forget_alternate(dest, from, "err", out);
                self.drop_vn(dest, from, "err", out);
            }
            let Some(entry) = self.table.get_mut(dest) else {
                continue;
            };
            if !(entry.is_active(ctx.now) && entry.next_hop == from) {
                continue;
            }
            entry.state = RouteState::Invalid;
            entry.dest_seq = entry.dest_seq.wrapping_add(1).max(seq);
            if !entry.precursors.is_empty() {
                propagate.push((dest, entry.dest_seq));
            }
            if self.buffer.has(dest) {
                rediscover.push(dest);
            }
        }
        self.send_err(propagate, out);
        for dest in rediscover {
            self.discover(ctx, dest, out);
        }
    }

    // ---- virtual nodes ----------------------------------------------------

    fn handle_beacon(&mut self, ctx: &NodeCtx, from: NodeId, b: &Beacon, out: &mut Out) {
        if !self.srvnp() {
            return;
        }
        let routes: BTreeMap<NodeId, RouteAdvert> =
            b.routes.iter().map(|r| (r.dest, r.clone())).collect();
        self.neighbors.insert(
            from,
            Neighbor {
                power: b.power,
                heard_at: ctx.now,
                routes,
            },
        );
        self.refresh_virtual_nodes(ctx.now, from, out);
    }

    /// Re-derives `from`'s virtual-node record on every route entry from its
    /// latest beacon.
    fn refresh_virtual_nodes(&mut self, now: SimTime, from: NodeId, out: &mut Out) {
        let Some(nb) = self.neighbors.get(&from) else {
            return;
        };
        for e in self.table.iter_mut() {
            let usable = match e.state {
                RouteState::Active => e.expires_at > now && e.next_hop != from,
                RouteState::UnderRepair => true,
                RouteState::Invalid => false,
            };
            let advert = if !usable {
                None
            } else if from == e.dest {
                Some((0, 0, None))
            } else {
                nb.routes
                    .get(&e.dest)
                    .map(|r| (r.hop_count, r.vn_count, Some(r.next_hop)))
            };
            let pos = e.virtual_nodes.iter().position(|v| v.node == from);
            match (advert, pos) {
                (Some((hop_count, vn_count, next_hop)), Some(i)) => {
                    let v = &mut e.virtual_nodes[i];
                    v.power = nb.power;
                    v.refreshed_at = now;
                    v.hop_count = hop_count;
                    v.vn_count = vn_count;
                    v.next_hop = next_hop;
                }
                (Some((hop_count, vn_count, next_hop)), None) => {
                    e.virtual_nodes.push(VirtualNodeRecord {
                        node: from,
                        power: nb.power,
                        learned_at: now,
                        refreshed_at: now,
                        hop_count,
                        vn_count,
                        next_hop,
                    });
                    trace(
                        out,
                        TraceEvent::new(TraceKind::VnAdd)
                            .with("dest", e.dest)
                            .with("vn", from)
                            .with("role", "vn")
                            .with("power", nb.power),
                    );
                }
                (None, Some(i)) if e.state != RouteState::UnderRepair => {
                    e.virtual_nodes.remove(i);
                    trace(
                        out,
                        TraceEvent::new(TraceKind::VnEvict)
                            .with("dest", e.dest)
                            .with("vn", from)
                            .with("role", "vn")
                            .with("reason", "withdrawn"),
                    );
                }
                _ => {}
            }
        }
    }

    fn drop_vn(&mut self, dest: NodeId, node: NodeId, reason: &'static str, out: &mut Out) {
        if let Some(e) = self.table.get_mut(dest) {
            if let Some(i) = e.virtual_nodes.iter().position(|v| v.node == node) {
                e.virtual_nodes.remove(i);
                trace(
                    out,
                    TraceEvent::new(TraceKind::VnEvict)
                        .with("dest", dest)
                        .with("vn", node)
                        .with("role", "vn")
                        .with("reason", reason),
                );
            }
        }
    }

    fn clear_vns(&mut self, dest: NodeId, reason: &'static str, out: &mut Out) {
        if let Some(e) = self.table.get_mut(dest) {
            for v in e.virtual_nodes.drain(..) {
                trace(
                    out,
                    TraceEvent::new(TraceKind::VnEvict)
                        .with("dest", dest)
                        .with("vn", v.node)
                        .with("role", "vn")
                        .with("reason", reason),
                );
            }
        }
    }

    /// Removes every trace of neighbour `n`: its beacon state, the
    /// alternates through it and its virtual-node records.
    fn forget_alternate(&mut self, dest: NodeId, via: NodeId, reason: &'static str, out: &mut Out) {
        if self.alternates.get_mut(&dest).is_some_and(|m| m.remove(&via).is_some()) {
            trace(
                out,
                TraceEvent::new(TraceKind::VnEvict)
                    .with("dest", dest)
                    .with("vn", via)
                    .with("role", "alt")
                    .with("reason", reason),
            );
        }
    }

    fn forget_neighbor(&mut self, n: NodeId, reason: &'static str, out: &mut Out) {
        if !self.srvnp() {
            return;
        }
        self.neighbors.remove(&n);
        for (dest, alts) in self.alternates.iter_mut() {
            if alts.remove(&n).is_some() {
                trace(
                    out,
                    TraceEvent::new(TraceKind::VnEvict)
                        .with("dest", *dest)
                        .with("vn", n)
                        .with("role", "alt")
                        .with("reason", reason),
                );
            }
        }
        for e in self.table.iter_mut() {
            if let Some(i) = e.virtual_nodes.iter().position(|v| v.node == n) {
                e.virtual_nodes.remove(i);
                trace(
                    out,
                    TraceEvent::new(TraceKind::VnEvict)
                        .with("dest", e.dest)
                        .with("vn", n)
                        .with("role", "vn")
                        .with("reason", reason),
                );
            }
        }
    }

    fn send_beacon(&mut self, ctx: &NodeCtx, out: &mut Out) {
        let now = ctx.now;
        let mut adverts: BTreeMap<NodeId, RouteAdvert> = BTreeMap::new();
        // A live neighbour is one hop away whatever the table says; a primary
        // route only replaces that advert when it is a one-hop route too.
        let live: Vec<NodeId> = self
            .neighbors
            .keys()
            .copied()
            .filter(|n| self.neighbor_live(*n, now))
            .collect();
        for n in live {
            adverts.insert(
                n,
                RouteAdvert {
                    dest: n,
                    next_hop: n,
                    hop_count: 1,
                    vn_count: 0,
                },
            );
        }
        for e in self.table.iter().filter(|e| e.is_active(now)) {
            if e.hop_count > 1 && adverts.contains_key(&e.dest) {
                continue;
            }
            adverts.insert(
                e.dest,
                RouteAdvert {
                    dest: e.dest,
                    next_hop: e.next_hop,
                    hop_count: e.hop_count,
                    vn_count: e.virtual_nodes.len() as u32,
                },
            );
        }
        let alt_dests: Vec<NodeId> = self.alternates.keys().copied().collect();
        for dest in alt_dests {
            if adverts.contains_key(&dest) {
                continue;
            }
            if let Some(next) = self.best_alternate(dest, now, None) {
                let hop_count = self.alternates[&dest][&next].hop_count;
                adverts.insert(
                    dest,
                    RouteAdvert {
                        dest,
                        next_hop: next,
                        hop_count,
                        vn_count: 0,
                    },
                );
            }
        }
        out.push(Action::Broadcast(ProtocolMessage::Beacon(Beacon {
            power: ctx.power,
            routes: adverts.into_values().collect(),
        })));
        let next = self.beacon_jitter(0.75, 1.25);
        out.push(Action::SetTimer {
            after: next,
            timer: Timer::Beacon,
        });
    }

    /// Periodic sweep: expired routes become Invalid, stale alternates,
    /// virtual nodes and neighbours are evicted.
    fn expire_routes(&mut self, ctx: &NodeCtx, out: &mut Out) {
        let now = ctx.now;
        for dest in self.table.expire(now) {
            self.clear_vns(dest, "expired", out);
        }
        for (dest, alts) in self.alternates.iter_mut() {
            let gone: Vec<NodeId> = alts
                .iter()
                .filter(|(_, a)| a.expires_at <= now)
                .map(|(n, _)| *n)
                .collect();
            for n in gone {
                alts.remove(&n);
                trace(
                    out,
                    TraceEvent::new(TraceKind::VnEvict)
                        .with("dest", *dest)
                        .with("vn", n)
                        .with("role", "alt")
                        .with("reason", "expired"),
                );
            }
        }
        self.alternates.retain(|_, m| !m.is_empty());
        if self.srvnp() {
            let stale: Vec<NodeId> = self
                .neighbors
                .keys()
                .copied()
                .filter(|n| !self.neighbor_live(*n, now))
                .collect();
            for n in stale {
                self.forget_neighbor(n, "stale", out);
            }
        }
        let horizon = now.saturating_sub(SEEN_LIFETIME);
        self.seen.retain(|_, t| *t > horizon);
        let seen = &self.seen;
        self.answered.retain(|k, _| seen.contains_key(k));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FlowId;

    fn node(id: u32, protocol: Protocol) -> RoutingNode {
        let cfg = RoutingConfig {
            protocol,
            ..RoutingConfig::default()
        };
        RoutingNode::new(NodeId(id), cfg, SimRng::substream(1, NodeId(id)))
    }

    fn ctx(ms: u64, power: f64) -> NodeCtx {
        NodeCtx {
            now: SimTime::from_millis(ms),
            power,
        }
    }

    fn rreq(origin: u32, id: u32, dest: u32, hops: u32, power: f64) -> RouteRequest {
        RouteRequest {
            id,
            origin: NodeId(origin),
            origin_seq: 1,
            dest: NodeId(dest),
            dest_seq: None,
            hop_count: hops,
            ttl: 10,
            path_min_power: power,
            repair: false,
        }
    }

    fn data(origin: u32, dest: u32, seq: u32) -> DataPacket {
        DataPacket {
            flow: FlowId(0),
            seq,
            origin: NodeId(origin),
            dest: NodeId(dest),
            payload_bytes: 64,
            alternate_candidate: false,
            detoured: false,
            hops: 0,
            ack: false,
        }
    }

    fn broadcasts(out: &[Action]) -> Vec<&ProtocolMessage> {
        out.iter()
            .filter_map(|a| match a {
                Action::Broadcast(m) => Some(m),
                _ => None,
            })
            .collect()
    }

    fn unicasts(out: &[Action]) -> Vec<(NodeId, &ProtocolMessage)> {
        out.iter()
            .filter_map(|a| match a {
                Action::Unicast { to, msg } => Some((*to, msg)),
                _ => None,
            })
            .collect()
    }

    fn traced(out: &[Action], kind: TraceKind) -> bool {
        out.iter()
            .any(|a| matches!(a, Action::Trace(ev) if ev.kind == kind))
    }

    #[test]
    fn origin_buffers_and_floods_once() {
        let mut a = node(0, Protocol::Srvnp);
        let out = a.originate_data(ctx(0, 10.0), data(0, 3, 0));
        let b = broadcasts(&out);
        assert_eq!(b.len(), 1);
        let ProtocolMessage::RReq(r) = b[0] else {
            panic!("expected RReq")
        };
        assert_eq!(r.hop_count, 0);
        assert_eq!(r.id, 1);
        assert_eq!(a.buffered(NodeId(3)), 1);
        // A second packet while discovery is outstanding does not re-flood.
        let out = a.originate_data(ctx(10, 10.0), data(0, 3, 1));
        assert!(broadcasts(&out).is_empty());
        assert_eq!(a.buffered(NodeId(3)), 2);
    }

    #[test]
    fn relay_learns_reverse_route_and_forwards() {
        let mut b = node(1, Protocol::Srvnp);
        let out = b.receive(ctx(0, 9.0), NodeId(0), &ProtocolMessage::RReq(rreq(0, 1, 3, 0, 10.0)));
        let f = broadcasts(&out);
        let ProtocolMessage::RReq(r) = f[0] else {
            panic!()
        };
        assert_eq!((r.hop_count, r.ttl, r.path_min_power), (1, 9, 9.0));
        let rev = b.table().active(NodeId(0), SimTime::ZERO).unwrap();
        assert_eq!((rev.next_hop, rev.hop_count), (NodeId(0), 1));
        // Same (origin, id) again is a duplicate.
        let out = b.receive(ctx(1, 9.0), NodeId(2), &ProtocolMessage::RReq(rreq(0, 1, 3, 1, 10.0)));
        assert!(broadcasts(&out).is_empty());
        assert!(traced(&out, TraceKind::RreqDropDup));
    }

    #[test]
    fn power_gate_only_in_srvnp() {
        let msg = ProtocolMessage::RReq(rreq(0, 1, 3, 0, 10.0));
        let mut c = node(2, Protocol::Srvnp);
        let out = c.receive(ctx(0, 1.5), NodeId(1), &msg);
        assert!(broadcasts(&out).is_empty());
        assert!(traced(&out, TraceKind::RreqDropPower));
        // Backward learning still happens.
        assert!(c.table().active(NodeId(0), SimTime::ZERO).is_some());
        let mut c = node(2, Protocol::AodvBaseline);
        let out = c.receive(ctx(0, 1.5), NodeId(1), &msg);
        assert_eq!(broadcasts(&out).len(), 1);
    }

    #[test]
    fn destination_replies_to_first_and_to_better_copies() {
        let mut d = node(3, Protocol::Srvnp);
        let out = d.receive(ctx(0, 10.0), NodeId(2), &ProtocolMessage::RReq(rreq(0, 1, 3, 2, 6.0)));
        assert_eq!(unicasts(&out)[0].0, NodeId(2));
        // More hops: ignored.
        let out = d.receive(ctx(1, 10.0), NodeId(4), &ProtocolMessage::RReq(rreq(0, 1, 3, 3, 9.0)));
        assert!(unicasts(&out).is_empty());
        // Same hops, higher path power: answered, and the reverse route moves.
        let out = d.receive(ctx(2, 10.0), NodeId(5), &ProtocolMessage::RReq(rreq(0, 1, 3, 2, 8.0)));
        assert_eq!(unicasts(&out)[0].0, NodeId(5));
        assert_eq!(d.table().active(NodeId(0), SimTime::from_millis(2)).unwrap().next_hop, NodeId(5));
    }

    #[test]
    fn reply_at_origin_flushes_in_order() {
        let mut a = node(0, Protocol::Srvnp);
        a.originate_data(ctx(0, 10.0), data(0, 3, 0));
        a.originate_data(ctx(1, 10.0), data(0, 3, 1));
        let rep = RouteReply {
            origin: NodeId(0),
            dest: NodeId(3),
            dest_seq: 1,
            hop_count: 2,
            lifetime: SimTime::from_secs(3),
            path_min_power: 8.0,
        };
        let out = a.receive(ctx(10, 10.0), NodeId(1), &ProtocolMessage::RRep(rep.clone()));
        let seqs: Vec<u32> = unicasts(&out)
            .into_iter()
            .map(|(to, m)| {
                assert_eq!(to, NodeId(1));
                match m {
                    ProtocolMessage::Data(d) => d.seq,
                    _ => panic!(),
                }
            })
            .collect();
        assert_eq!(seqs, vec![0, 1]);
        assert_eq!(a.table().get(NodeId(3)).unwrap().hop_count, 3);
        // A stale reply is ignored.
        let stale = RouteReply { dest_seq: 0, ..rep };
        a.receive(ctx(11, 10.0), NodeId(2), &ProtocolMessage::RRep(stale));
        assert_eq!(a.stats().stale_replies, 1);
        assert_eq!(a.table().get(NodeId(3)).unwrap().next_hop, NodeId(1));
    }

    #[test]
    fn relay_without_reverse_route_drops_reply() {
        let mut b = node(1, Protocol::Srvnp);
        let rep = RouteReply {
            origin: NodeId(0),
            dest: NodeId(3),
            dest_seq: 1,
            hop_count: 0,
            lifetime: SimTime::from_secs(3),
            path_min_power: 8.0,
        };
        let out = b.receive(ctx(0, 10.0), NodeId(3), &ProtocolMessage::RRep(rep));
        assert!(unicasts(&out).is_empty());
        assert_eq!(b.stats().orphan_replies, 1);
    }

    #[test]
    fn intermediate_without_route_drops_and_errs() {
        let mut b = node(1, Protocol::AodvBaseline);
        let out = b.receive(ctx(0, 10.0), NodeId(0), &ProtocolMessage::Data(data(0, 3, 0)));
        assert!(out.iter().any(|a| matches!(a, Action::Drop { reason: DropReason::NoRoute, .. })));
        assert!(matches!(broadcasts(&out)[0], ProtocolMessage::Err(_)));
    }

    #[test]
    fn err_invalidates_only_routes_via_sender() {
        let mut b = node(1, Protocol::Srvnp);
        for (dest, via) in [(3, 2), (4, 5)] {
            b.table.offer(
                RouteOffer {
                    dest: NodeId(dest),
                    next_hop: NodeId(via),
                    hop_count: 2,
                    dest_seq: 1,
                    path_min_power: 9.0,
                    expires_at: SimTime::from_secs(3),
                },
                SimTime::ZERO,
            );
        }
        let err = RouteError {
            unreachable: vec![(NodeId(3), 2), (NodeId(4), 2)],
        };
        b.receive(ctx(0, 10.0), NodeId(2), &ProtocolMessage::Err(err));
        assert!(b.table().active(NodeId(3), SimTime::ZERO).is_none());
        assert!(b.table().active(NodeId(4), SimTime::ZERO).is_some());
    }

    #[test]
    fn unused_route_expires() {
        let mut b = node(1, Protocol::Srvnp);
        b.table.offer(
            RouteOffer {
                dest: NodeId(3),
                next_hop: NodeId(2),
                hop_count: 2,
                dest_seq: 1,
                path_min_power: 9.0,
                expires_at: SimTime::from_secs(3),
            },
            SimTime::ZERO,
        );
        b.timer(ctx(2_000, 10.0), Timer::Maintenance);
        assert!(b.table().active(NodeId(3), SimTime::from_secs(2)).is_some());
        // Forwarding refreshes the lifetime.
        b.receive(ctx(2_500, 10.0), NodeId(0), &ProtocolMessage::Data(data(0, 3, 0)));
        b.timer(ctx(3_100, 10.0), Timer::Maintenance);
        assert!(b.table().active(NodeId(3), SimTime::from_millis(3_100)).is_some());
        b.timer(ctx(5_600, 10.0), Timer::Maintenance);
        assert_eq!(b.table().get(NodeId(3)).unwrap().state, RouteState::Invalid);
    }

    #[test]
    fn beacon_creates_virtual_node_records() {
        let mut h = node(7, Protocol::Srvnp);
        h.table.offer(
            RouteOffer {
                dest: NodeId(3),
                next_hop: NodeId(6),
                hop_count: 4,
                dest_seq: 1,
                path_min_power: 9.0,
                expires_at: SimTime::from_secs(3),
            },
            SimTime::ZERO,
        );
        let beacon = |power: f64| {
            ProtocolMessage::Beacon(Beacon {
                power,
                routes: vec![RouteAdvert {
                    dest: NodeId(3),
                    next_hop: NodeId(5),
                    hop_count: 3,
                    vn_count: 1,
                }],
            })
        };
        let out = h.receive(ctx(100, 10.0), NodeId(8), &beacon(9.0));
        assert!(traced(&out, TraceKind::VnAdd));
        let vn = h.table().get(NodeId(3)).unwrap().vn(NodeId(8)).unwrap().clone();
        assert_eq!((vn.power, vn.hop_count, vn.next_hop), (9.0, 3, Some(NodeId(5))));
        h.receive(ctx(1_100, 10.0), NodeId(8), &beacon(6.0));
        assert_eq!(h.table().get(NodeId(3)).unwrap().vn(NodeId(8)).unwrap().power, 6.0);
        // The primary next hop is never its own virtual node.
        h.receive(ctx(1_200, 10.0), NodeId(6), &beacon(9.0));
        assert!(h.table().get(NodeId(3)).unwrap().vn(NodeId(6)).is_none());
        // Silence for two intervals evicts.
        let out = h.timer(ctx(3_200, 10.0), Timer::Maintenance);
        assert!(traced(&out, TraceKind::VnEvict));
        assert!(h.table().get(NodeId(3)).unwrap().virtual_nodes.is_empty());
    }

    #[test]
    fn link_break_with_candidate_starts_scored_repair() {
        let mut h = node(7, Protocol::Srvnp);
        h.table.offer(
            RouteOffer {
                dest: NodeId(3),
                next_hop: NodeId(6),
                hop_count: 4,
                dest_seq: 1,
                path_min_power: 9.0,
                expires_at: SimTime::from_secs(3),
            },
            SimTime::ZERO,
        );
        h.receive(
            ctx(100, 10.0),
            NodeId(8),
            &ProtocolMessage::Beacon(Beacon {
                power: 9.0,
                routes: vec![RouteAdvert {
                    dest: NodeId(3),
                    next_hop: NodeId(5),
                    hop_count: 3,
                    vn_count: 3,
                }],
            }),
        );
        let mut pkt = data(0, 3, 0);
        pkt.hops = 3;
        let out = h.unicast_failed(ctx(200, 10.0), NodeId(6), &ProtocolMessage::Data(pkt));
        // One-hop salvage broadcast.
        assert!(broadcasts(&out)
            .iter()
            .any(|m| matches!(m, ProtocolMessage::Data(d) if d.alternate_candidate)));
        let (to, msg) = unicasts(&out)[0];
        assert_eq!(to, NodeId(8));
        let ProtocolMessage::RReq(r) = msg else {
            panic!()
        };
        assert!(r.repair);
        assert_eq!(r.ttl, 15);
        assert!(h.is_repairing(NodeId(3)));
        assert_eq!(h.buffered(NodeId(3)), 1);
        // No reply in time: Err and drop.
        let out = h.timer(ctx(400, 10.0), Timer::Repair { dest: NodeId(3), rreq_id: r.id });
        assert!(traced(&out, TraceKind::RepairFail));
        assert!(traced(&out, TraceKind::ErrTx));
        assert_eq!(h.buffered(NodeId(3)), 0);
    }

    #[test]
    fn link_break_without_candidates_sends_err() {
        let mut h = node(7, Protocol::Srvnp);
        h.table.offer(
            RouteOffer {
                dest: NodeId(3),
                next_hop: NodeId(6),
                hop_count: 4,
                dest_seq: 1,
                path_min_power: 9.0,
                expires_at: SimTime::from_secs(3),
            },
            SimTime::ZERO,
        );
        h.table.get_mut(NodeId(3)).unwrap().precursors.insert(NodeId(1));
        let mut pkt = data(0, 3, 0);
        pkt.hops = 3;
        let out = h.unicast_failed(ctx(200, 10.0), NodeId(6), &ProtocolMessage::Data(pkt));
        assert!(!h.is_repairing(NodeId(3)));
        assert!(traced(&out, TraceKind::ErrTx));
    }

    #[test]
    fn repair_reply_reports_longer_route() {
        let mut h = node(7, Protocol::AodvBaseline);
        h.table.offer(
            RouteOffer {
                dest: NodeId(3),
                next_hop: NodeId(6),
                hop_count: 3,
                dest_seq: 1,
                path_min_power: 9.0,
                expires_at: SimTime::from_secs(3),
            },
            SimTime::ZERO,
        );
        let mut pkt = data(0, 3, 0);
        pkt.hops = 2;
        let out = h.unicast_failed(ctx(100, 10.0), NodeId(6), &ProtocolMessage::Data(pkt));
        let ProtocolMessage::RReq(r) = broadcasts(&out)[0] else {
            panic!()
        };
        assert_eq!(r.ttl, 5);
        let rep = RouteReply {
            origin: NodeId(7),
            dest: NodeId(3),
            dest_seq: r.dest_seq.unwrap(),
            hop_count: 3,
            lifetime: SimTime::from_secs(3),
            path_min_power: 9.0,
        };
        let out = h.receive(ctx(150, 10.0), NodeId(9), &ProtocolMessage::RRpr(rep));
        let ok = out
            .iter()
            .find_map(|a| match a {
                Action::Trace(ev) if ev.kind == TraceKind::RepairOk => Some(ev.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(ok.get("longer"), Some("1"));
        assert_eq!(unicasts(&out)[0].0, NodeId(9));
        assert!(!h.is_repairing(NodeId(3)));
    }
}
