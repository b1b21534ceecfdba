//! The simulated world: radio medium, mobility, batteries and traffic wired
//! around one [`RoutingNode`] per node.
//!
//! Node actions are applied through a FIFO worklist so a link-break callback
//! raised while handling one action is processed before the next. After every
//! call into a node the simulator re-checks the Active next-hop graph for the
//! destinations that node just changed.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

use thiserror::Error;

use crate::energy::{Activity, Battery, PowerZone, ZoneThresholds};
use crate::kernel::{KernelError, Scheduler, SimRng, SimTime};
use crate::metrics::{CbrSource, Counters, FlowStats, MetricsReport};
use crate::radio::{DeliveryOutcome, Medium, MobilityState, Position, WaypointParams};
use crate::routing::{Action, DataPacket, NodeCtx, Protocol, ProtocolMessage, RoutingNode, Timer};
use crate::scenario::{ConfigError, MobilityModel, ScenarioConfig};
use crate::trace::{self, TraceEvent, TraceKind};
use crate::{FlowId, NodeId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("scheduler: {0}")]
    Kernel(#[from] KernelError),
}

/// Runtime checks of the protocol's safety properties.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvariantReport {
    pub loop_checks: u64,
    pub loop_violations: u64,
    pub gate_checks: u64,
    pub gate_violations: u64,
    pub duplicate_forwards: u64,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        self.loop_violations == 0 && self.gate_violations == 0 && self.duplicate_forwards == 0
    }
}

#[derive(Debug)]
enum Event {
    /// A frame reaching its receivers, in id order.
    Transmission {
        sender: NodeId,
        to: Option<NodeId>,
        msg: Rc<ProtocolMessage>,
        receivers: Vec<NodeId>,
    },
    Timer {
        node: NodeId,
        timer: Timer,
    },
    MobilityStep,
    TrafficTick {
        flow: usize,
    },
    Retransmit {
        flow: usize,
        seq: u32,
        attempt: u32,
    },
    NodeState {
        node: NodeId,
        up: bool,
    },
}

struct FlowState {
    source: CbrSource,
    stats: FlowStats,
    acked: HashSet<u32>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub protocol: Protocol,
    pub node_count: u32,
    pub pause_time_s: f64,
    pub speed_max: f64,
    pub report: MetricsReport,
    pub flows: Vec<FlowStats>,
    pub invariants: InvariantReport,
    pub trace: Option<String>,
}

pub const CSV_HEADER: &str = "seed,protocol,node_count,pause_time_s,speed_max,pdr,mean_delay_s,\
throughput_std_Bps,throughput_paper_Bps,sent,received,rreq_tx,err_tx,repairs_attempted,repairs_succeeded";

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.prec$}"))
}

impl RunResult {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        let c = &r.counters;
        format!(
            "{},{},{},{},{},{:.6},{},{:.3},{},{},{},{},{},{},{}",
            self.seed,
            self.protocol,
            self.node_count,
            self.pause_time_s,
            self.speed_max,
            r.delivery_ratio,
            opt(r.mean_delay, 6),
            r.throughput_std,
            opt(r.throughput_paper, 3),
            r.sent,
            r.received,
            c.rreq_tx,
            c.err_tx,
            c.repairs_attempted,
            c.repairs_succeeded,
        )
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    sched: Scheduler<Event>,
    medium: Medium,
    zones: ZoneThresholds,
    waypoint: Option<WaypointParams>,
    mobility: Vec<MobilityState>,
    mob_rngs: Vec<SimRng>,
    positions: Vec<Position>,
    moved_at: SimTime,
    up: Vec<bool>,
    started: Vec<bool>,
    batteries: Vec<Battery>,
    idle_at: Vec<SimTime>,
    nodes: Vec<RoutingNode>,
    flows: Vec<FlowState>,
    trace: Option<String>,
    counters: Counters,
    invariants: InvariantReport,
    forwarded: HashSet<(NodeId, NodeId, u32)>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.node_count as usize;
        let area = cfg.area();
        let mut global = SimRng::new(cfg.seed);
        let mut mob_rngs: Vec<SimRng> = (0..n)
            .map(|i| SimRng::substream(cfg.seed, NodeId(i as u32)))
            .collect();
        let pause = SimTime::from_secs_f64(cfg.pause_time_s);
        let mut positions: Vec<Position> = (0..n).map(|i| area.random_point(&mut mob_rngs[i])).collect();
        let mut levels: Vec<f64> = (0..n)
            .map(|_| match cfg.battery_init_min {
                Some(lo) => global.rand_uniform(lo, cfg.battery_init).unwrap_or(lo),
                None => cfg.battery_init,
            })
            .collect();
        for spec in &cfg.nodes {
            positions[spec.id.index()] = spec.pos;
            if let Some(b) = spec.battery {
                levels[spec.id.index()] = b;
            }
        }
        let mobility = positions
            .iter()
            .map(|p| MobilityState::resting(*p, pause))
            .collect();
        let waypoint = (cfg.mobility == MobilityModel::RandomWaypoint).then_some(WaypointParams {
            area,
            speed_min: cfg.speed_min,
            speed_max: cfg.speed_max,
            pause,
        });
        let rates = cfg.drain_rates();
        let batteries = levels
            .iter()
            .map(|l| Battery::new(*l, rates).expect("validated battery level"))
            .collect();
        let rcfg = cfg.routing_config();
        let nodes = (0..n)
            .map(|i| {
                let id = NodeId(i as u32);
                RoutingNode::new(id, rcfg.clone(), SimRng::substream(cfg.seed, id).with_stream(2))
            })
            .collect();
        let flows = cfg
            .resolved_flows()
            .into_iter()
            .map(|f| FlowState {
                stats: FlowStats::new(f.payload),
                source: CbrSource::new(f),
                acked: HashSet::new(),
            })
            .collect();

        // A node whose first scheduled event is a join starts switched off.
        let mut up = vec![true; n];
        let mut events = cfg.node_events.clone();
        events.sort_by_key(|e| e.at);
        let mut first_seen = vec![false; n];
        for e in &events {
            let i = e.node.index();
            if !first_seen[i] {
                first_seen[i] = true;
                up[i] = !e.up;
            }
        }

        let mut sim = Simulation {
            medium: Medium {
                range: cfg.radio_range_m,
                hop_latency: SimTime::from_secs_f64(cfg.hop_latency_ms / 1e3),
            },
            zones: rcfg.zones,
            sched: Scheduler::new(),
            waypoint,
            mobility,
            mob_rngs,
            positions,
            moved_at: SimTime::ZERO,
            started: vec![false; n],
            up,
            batteries,
            idle_at: vec![SimTime::ZERO; n],
            nodes,
            flows,
            trace: None,
            counters: Counters::default(),
            invariants: InvariantReport::default(),
            forwarded: HashSet::new(),
            cfg,
        };
        for e in events {
            sim.sched.schedule(Event::NodeState { node: e.node, up: e.up }, e.at)?;
        }
        if sim.waypoint.is_some() {
            sim.sched.schedule(Event::MobilityStep, sim.mobility_tick())?;
        }
        for (i, f) in sim.flows.iter().enumerate() {
            if let Some(t) = f.source.next_emission() {
                sim.sched.schedule(Event::TrafficTick { flow: i }, t)?;
            }
        }
        for i in 0..n {
            if sim.up[i] {
                sim.start_node(NodeId(i as u32))?;
            }
        }
        Ok(sim)
    }

    /// Records trace lines from now on.
    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(String::new());
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn node(&self, id: NodeId) -> &RoutingNode {
        &self.nodes[id.index()]
    }

    pub fn position(&self, id: NodeId) -> Position {
        self.positions[id.index()]
    }

    pub fn battery_level(&self, id: NodeId) -> f64 {
        self.batteries[id.index()].level()
    }

    pub fn is_up(&self, id: NodeId) -> bool {
        self.up[id.index()]
    }

    pub fn invariants(&self) -> &InvariantReport {
        &self.invariants
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn trace_text(&self) -> Option<&str> {
        self.trace.as_deref()
    }

    pub fn flow_stats(&self, flow: FlowId) -> &FlowStats {
        &self.flows[flow.0 as usize].stats
    }

    /// Current neighbours of `id` among nodes that are up.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.medium.neighbors(&self.positions, &self.up, id)
    }

    /// The hop-by-hop path the Active tables currently give from `src` to
    /// `dst`, if it reaches `dst` without repeating a node.
    pub fn route_path(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let now = self.now();
        let mut path = vec![src];
        let mut cur = src;
        while cur != dst {
            let e = self.nodes[cur.index()].table().active(dst, now)?;
            if path.contains(&e.next_hop) {
                return None;
            }
            path.push(e.next_hop);
            cur = e.next_hop;
        }
        Some(path)
    }

    fn mobility_tick(&self) -> SimTime {
        SimTime::from_secs_f64(self.cfg.mobility_tick_ms / 1e3)
    }

    fn advance_positions(&mut self, now: SimTime) {
        let Some(params) = self.waypoint else {
            return;
        };
        if now <= self.moved_at {
            return;
        }
        let dt = now - self.moved_at;
        for i in 0..self.mobility.len() {
            let next = self.mobility[i].step_waypoint(self.moved_at, dt, &params, &mut self.mob_rngs[i]);
            self.positions[i] = next.pos;
            self.mobility[i] = next;
        }
        self.moved_at = now;
    }

    fn ctx(&mut self, id: NodeId) -> NodeCtx {
        let now = self.sched.now();
        let i = id.index();
        if now > self.idle_at[i] {
            let dt = now - self.idle_at[i];
            self.batteries[i].apply_drain(Activity::Idle(dt));
            self.idle_at[i] = now;
            self.check_depleted(id);
        }
        NodeCtx {
            now,
            power: self.batteries[i].level(),
        }
    }

    fn drain(&mut self, id: NodeId, activity: Activity) {
        self.batteries[id.index()].apply_drain(activity);
        self.check_depleted(id);
    }

    fn check_depleted(&mut self, id: NodeId) {
        if self.batteries[id.index()].is_depleted() {
            self.up[id.index()] = false;
        }
    }

    fn start_node(&mut self, id: NodeId) -> Result<(), SimError> {
        if self.started[id.index()] {
            return Ok(());
        }
        self.started[id.index()] = true;
        let ctx = self.ctx(id);
        let actions = self.nodes[id.index()].start(ctx);
        self.apply(id, actions)
    }

    fn record(&mut self, node: NodeId, ev: &TraceEvent) {
        match ev.kind {
            TraceKind::RepairStart if ev.get("retry").is_none() => self.counters.repairs_attempted += 1,
            TraceKind::RepairOk => {
                self.counters.repairs_succeeded += 1;
                if ev.get("longer") == Some("1") {
                    self.counters.repairs_longer += 1;
                }
            }
            _ => {}
        }
        if let Some(buf) = self.trace.as_mut() {
            trace::write_line(buf, self.sched.now(), node, ev);
        }
    }

    fn count_tx(&mut self, msg: &ProtocolMessage) {
        self.counters.frames_tx += 1;
        match msg {
            ProtocolMessage::RReq(_) => self.counters.rreq_tx += 1,
            ProtocolMessage::RRep(_) | ProtocolMessage::RRpr(_) => self.counters.rrep_tx += 1,
            ProtocolMessage::Err(_) => self.counters.err_tx += 1,
            ProtocolMessage::Beacon(_) => self.counters.beacon_tx += 1,
            ProtocolMessage::Data(_) => {}
        }
    }

    fn check_forward(&mut self, node: NodeId, msg: &ProtocolMessage) {
        let ProtocolMessage::RReq(r) = msg else {
            return;
        };
        if r.origin == node {
            return;
        }
        if self.cfg.protocol == Protocol::Srvnp {
            self.invariants.gate_checks += 1;
            if self.zones.zone_of(self.batteries[node.index()].level()) != PowerZone::Active {
                self.invariants.gate_violations += 1;
            }
        }
        if !self.forwarded.insert((node, r.origin, r.id)) {
            self.invariants.duplicate_forwards += 1;
        }
    }

    fn check_loops(&mut self, node: NodeId) {
        let changed = self.nodes[node.index()].take_route_changes();
        let now = self.sched.now();
        for dest in changed {
            self.invariants.loop_checks += 1;
            let mut cur = node;
            let mut visited = vec![node];
            while let Some(e) = self.nodes[cur.index()].table().active(dest, now) {
                let next = e.next_hop;
                if next == dest {
                    break;
                }
                if visited.contains(&next) {
                    self.invariants.loop_violations += 1;
                    break;
                }
                visited.push(next);
                cur = next;
            }
        }
    }

    /// Carries out `actions` issued by `origin`, plus anything they trigger.
    fn apply(&mut self, origin: NodeId, actions: Vec<Action>) -> Result<(), SimError> {
        self.check_loops(origin);
        let mut work: VecDeque<(NodeId, Action)> = actions.into_iter().map(|a| (origin, a)).collect();
        while let Some((node, action)) = work.pop_front() {
            let now = self.sched.now();
            match action {
                Action::Trace(ev) => self.record(node, &ev),
                Action::SetTimer { after, timer } => {
                    self.sched.schedule(Event::Timer { node, timer }, now + after)?;
                }
                Action::Broadcast(msg) => {
                    if !self.up[node.index()] {
                        continue;
                    }
                    self.check_forward(node, &msg);
                    self.advance_positions(now);
                    self.count_tx(&msg);
                    self.drain(node, Activity::Tx);
                    let receivers = self.medium.local_broadcast(&self.positions, &self.up, node);
                    if !receivers.is_empty() {
                        self.sched.schedule(
                            Event::Transmission {
                                sender: node,
                                to: None,
                                msg: Rc::new(msg),
                                receivers,
                            },
                            now + self.medium.hop_latency,
                        )?;
                    }
                }
                Action::Unicast { to, msg } => {
                    if !self.up[node.index()] {
                        continue;
                    }
                    self.check_forward(node, &msg);
                    self.advance_positions(now);
                    self.count_tx(&msg);
                    self.drain(node, Activity::Tx);
                    let outcome = self
                        .medium
                        .unicast(&self.positions, &self.up, node, to, now)
                        .expect("node ids come from the simulation");
                    match outcome {
                        DeliveryOutcome::Delivered { at, overhearers } => {
                            let mut receivers = overhearers;
                            receivers.push(to);
                            receivers.sort();
                            self.sched.schedule(
                                Event::Transmission {
                                    sender: node,
                                    to: Some(to),
                                    msg: Rc::new(msg),
                                    receivers,
                                },
                                at,
                            )?;
                        }
                        DeliveryOutcome::LinkBreak => {
                            if !self.up[node.index()] {
                                continue;
                            }
                            let ctx = self.ctx(node);
                            let more = self.nodes[node.index()].unicast_failed(ctx, to, &msg);
                            self.check_loops(node);
                            work.extend(more.into_iter().map(|a| (node, a)));
                        }
                    }
                }
                Action::Deliver(pkt) => {
                    let more = self.deliver(node, pkt);
                    work.extend(more.into_iter().map(|a| (node, a)));
                }
                Action::Drop { pkt, reason } => {
                    self.counters.data_dropped += 1;
                    let mut ev = TraceEvent::new(TraceKind::DataDrop)
                        .with("flow", pkt.flow)
                        .with("seq", pkt.seq)
                        .with("reason", reason.as_str());
                    if pkt.ack {
                        ev = ev.with("ack", 1);
                    }
                    self.record(node, &ev);
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, node: NodeId, pkt: DataPacket) -> Vec<Action> {
        let now = self.sched.now();
        let fi = pkt.flow.0 as usize;
        if pkt.ack {
            self.flows[fi].acked.insert(pkt.seq);
            return Vec::new();
        }
        let fresh = self.flows[fi].stats.record_recv(pkt.seq, now);
        if !fresh {
            self.counters.duplicate_deliveries += 1;
            return Vec::new();
        }
        let sent = self.flows[fi].stats.sent[&pkt.seq];
        let ev = TraceEvent::new(TraceKind::DataRx)
            .with("flow", pkt.flow)
            .with("seq", pkt.seq)
            .with("src", pkt.origin)
            .with("dst", node)
            .with("delay_us", (now - sent).as_micros())
            .with("hops", pkt.hops);
        self.record(node, &ev);
        if self.cfg.retx_retries == 0 {
            return Vec::new();
        }
        let ack = DataPacket {
            flow: pkt.flow,
            seq: pkt.seq,
            origin: node,
            dest: pkt.origin,
            payload_bytes: 0,
            alternate_candidate: false,
            detoured: false,
            hops: 0,
            ack: true,
        };
        let ctx = self.ctx(node);
        let out = self.nodes[node.index()].originate_data(ctx, ack);
        self.check_loops(node);
        out
    }

    fn send_data(&mut self, fi: usize, seq: u32, retx: bool) -> Result<(), SimError> {
        let spec = self.flows[fi].source.spec().clone();
        let now = self.sched.now();
        if !retx {
            self.flows[fi].stats.record_send(seq, now);
        }
        let mut ev = TraceEvent::new(TraceKind::DataTx)
            .with("flow", spec.id)
            .with("seq", seq)
            .with("src", spec.src)
            .with("dst", spec.dst);
        if retx {
            ev = ev.with("retx", 1);
        }
        self.record(spec.src, &ev);
        if !self.up[spec.src.index()] {
            return Ok(());
        }
        let pkt = DataPacket {
            flow: spec.id,
            seq,
            origin: spec.src,
            dest: spec.dst,
            payload_bytes: spec.payload,
            alternate_candidate: false,
            detoured: false,
            hops: 0,
            ack: false,
        };
        let ctx = self.ctx(spec.src);
        let actions = self.nodes[spec.src.index()].originate_data(ctx, pkt);
        self.apply(spec.src, actions)
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        let now = self.sched.now();
        match ev {
            Event::Transmission {
                sender,
                to,
                msg,
                receivers,
            } => {
                for r in receivers {
                    if !self.up[r.index()] {
                        continue;
                    }
                    self.drain(r, Activity::Rx);
                    if !self.up[r.index()] {
                        continue;
                    }
                    let ctx = self.ctx(r);
                    let node = &mut self.nodes[r.index()];
                    let actions = match to {
                        Some(dst) if dst != r => node.overhear(ctx, sender, dst, &msg),
                        _ => node.receive(ctx, sender, &msg),
                    };
                    self.apply(r, actions)?;
                }
            }
            Event::Timer { node, timer } => {
                if self.up[node.index()] {
                    let ctx = self.ctx(node);
                    let actions = self.nodes[node.index()].timer(ctx, timer);
                    self.apply(node, actions)?;
                }
            }
            Event::MobilityStep => {
                self.advance_positions(now);
                self.sched.schedule(Event::MobilityStep, now + self.mobility_tick())?;
            }
            Event::TrafficTick { flow } => {
                if let Some(seq) = self.flows[flow].source.generate(now) {
                    self.send_data(flow, seq, false)?;
                    if self.cfg.retx_retries > 0 {
                        let at = now + SimTime::from_secs_f64(self.cfg.retx_timeout_ms / 1e3);
                        self.sched.schedule(Event::Retransmit { flow, seq, attempt: 1 }, at)?;
                    }
                }
                if let Some(t) = self.flows[flow].source.next_emission() {
                    self.sched.schedule(Event::TrafficTick { flow }, t.max(now))?;
                }
            }
            Event::Retransmit { flow, seq, attempt } => {
                let f = &self.flows[flow];
                if !f.acked.contains(&seq) && attempt <= self.cfg.retx_retries {
                    self.send_data(flow, seq, true)?;
                    let at = now + SimTime::from_secs_f64(self.cfg.retx_timeout_ms / 1e3);
                    self.sched.schedule(
                        Event::Retransmit {
                            flow,
                            seq,
                            attempt: attempt + 1,
                        },
                        at,
                    )?;
                }
            }
            Event::NodeState { node, up } => {
                let i = node.index();
                if up {
                    if !self.batteries[i].is_depleted() {
                        self.up[i] = true;
                        self.start_node(node)?;
                    }
                } else {
                    self.up[i] = false;
                }
            }
        }
        Ok(())
    }

    /// Runs every event up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<u64, SimError> {
        let mut executed = 0;
        while let Some((_, ev)) = self.sched.pop_due(until) {
            self.handle(ev)?;
            executed += 1;
        }
        self.sched.advance_to(until)?;
        self.advance_positions(until);
        Ok(executed)
    }

    /// Runs to the configured end and assembles the result.
    pub fn run(mut self) -> Result<RunResult, SimError> {
        let end = self.cfg.duration();
        self.run_until(end)?;
        Ok(self.finish())
    }

    pub fn report(&self) -> MetricsReport {
        let flows: Vec<FlowStats> = self.flows.iter().map(|f| f.stats.clone()).collect();
        let mut counters = self.counters.clone();
        counters.duplicate_deliveries = flows.iter().map(|f| f.duplicates).sum();
        MetricsReport::from_flows(&flows, self.cfg.sim_duration_s, counters)
    }

    pub fn finish(self) -> RunResult {
        let report = self.report();
        RunResult {
            seed: self.cfg.seed,
            protocol: self.cfg.protocol,
            node_count: self.cfg.node_count,
            pause_time_s: self.cfg.pause_time_s,
            speed_max: self.cfg.speed_max,
            flows: self.flows.into_iter().map(|f| f.stats).collect(),
            report,
            invariants: self.invariants,
            trace: self.trace,
        }
    }
}

/// Builds and runs one scenario.
pub fn run_scenario(cfg: &ScenarioConfig, with_trace: bool) -> Result<RunResult, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    if with_trace {
        sim.enable_trace();
    }
    sim.run()
}

/// Formats results as CSV with the header row.
pub fn to_csv(rows: &[RunResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
