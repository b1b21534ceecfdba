//! Built-in worked examples: two small static topologies with scripted
//! failures, and the nine rows of the repair-score table.

use std::collections::BTreeSet;

use crate::energy::PowerZone;
use crate::kernel::SimTime;
use crate::metrics::FlowSpec;
use crate::radio::{in_range, Position};
use crate::routing::{compute_eq1, select_repair_next_hop, RepairCandidate, RepairContext};
use crate::scenario::{MobilityModel, NodeEvent, NodeSpec, ScenarioConfig};
use crate::sim::{SimError, Simulation};
use crate::trace::{parse_line, TraceKind};
use crate::{FlowId, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureNode {
    pub name: &'static str,
    pub pos: Position,
    pub battery: f64,
}

/// A pinned static topology.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub nodes: Vec<FixtureNode>,
    pub edges: Vec<(&'static str, &'static str)>,
}

const RANGE: f64 = 250.0;

fn node(name: &'static str, x: f64, y: f64, battery: f64) -> FixtureNode {
    FixtureNode {
        name,
        pos: Position::new(x, y),
        battery,
    }
}

impl Fixture {
    pub fn id(&self, name: &str) -> NodeId {
        let i = self
            .nodes
            .iter()
            .position(|n| n.name == name)
            .unwrap_or_else(|| panic!("no fixture node `{name}`"));
        NodeId(i as u32)
    }

    pub fn name(&self, id: NodeId) -> &'static str {
        self.nodes[id.index()].name
    }

    /// Renders a path as `A-B-C`.
    pub fn path_string(&self, path: &[NodeId]) -> String {
        path.iter().map(|n| self.name(*n)).collect::<Vec<_>>().join("-")
    }

    fn edge_set(pairs: impl IntoIterator<Item = (NodeId, NodeId)>) -> BTreeSet<(NodeId, NodeId)> {
        pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect()
    }

    /// Whether the unit-disk graph of the placements is exactly the edge list.
    pub fn realizes_edges(&self) -> bool {
        let want = Self::edge_set(self.edges.iter().map(|(a, b)| (self.id(a), self.id(b))));
        let mut got = Vec::new();
        for (i, a) in self.nodes.iter().enumerate() {
            for (j, b) in self.nodes.iter().enumerate().skip(i + 1) {
                if in_range(&a.pos, &b.pos, RANGE) {
                    got.push((NodeId(i as u32), NodeId(j as u32)));
                }
            }
        }
        Self::edge_set(got) == want
    }

    /// A static, drain-free scenario over this topology with no traffic.
    pub fn config(&self, duration_s: f64) -> ScenarioConfig {
        ScenarioConfig {
            node_count: self.nodes.len() as u32,
            area_x: 1000.0,
            area_y: 1000.0,
            radio_range_m: RANGE,
            mobility: MobilityModel::Static,
            sim_duration_s: duration_s,
            drain_tx: 0.0,
            drain_rx: 0.0,
            drain_idle: 0.0,
            flows: Vec::new(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| NodeSpec {
                    id: NodeId(i as u32),
                    pos: n.pos,
                    battery: Some(n.battery),
                })
                .collect(),
            ..ScenarioConfig::default()
        }
    }

    fn flow(&self, cfg: &mut ScenarioConfig, src: &str, dst: &str, start: f64, stop: f64) {
        cfg.flows.push(FlowSpec {
            id: FlowId(cfg.flows.len() as u32),
            src: self.id(src),
            dst: self.id(dst),
            rate: 4.0,
            payload: 64,
            start: SimTime::from_secs_f64(start),
            stop: SimTime::from_secs_f64(stop),
        });
    }

    fn event(&self, cfg: &mut ScenarioConfig, name: &str, at: f64, up: bool) {
        cfg.node_events.push(NodeEvent {
            node: self.id(name),
            at: SimTime::from_secs_f64(at),
            up,
        });
    }
}

/// Eleven nodes. C sits on the shortest A-D path but its battery is in the
/// Danger zone; the detour through H, G/I, F and E is two hops longer.
pub fn fig1() -> Fixture {
    Fixture {
        nodes: vec![
            node("A", 507.0, 204.0, 10.0),
            node("B", 528.0, 340.0, 10.0),
            node("C", 676.0, 427.0, 1.5),
            node("D", 760.0, 520.0, 10.0),
            node("E", 686.0, 702.0, 10.0),
            node("F", 485.0, 795.0, 10.0),
            node("G", 320.0, 644.0, 10.0),
            node("H", 393.0, 507.0, 10.0),
            node("I", 377.0, 626.0, 10.0),
            node("J", 817.0, 703.0, 10.0),
            node("K", 913.0, 899.0, 10.0),
        ],
        edges: vec![
            ("A", "B"),
            ("B", "C"),
            ("C", "D"),
            ("B", "H"),
            ("H", "G"),
            ("G", "F"),
            ("F", "E"),
            ("E", "D"),
            ("H", "I"),
            ("I", "F"),
            ("I", "G"),
            ("J", "D"),
            ("J", "E"),
            ("J", "K"),
        ],
    }
}

/// Ten nodes. The A-X flow runs over N-R-X; when R fails, N's neighbours
/// L and P1 both have routes to X, and P's low battery keeps it off the
/// rebuilt path.
pub fn fig2() -> Fixture {
    Fixture {
        nodes: vec![
            node("A", 449.0, 937.0, 10.0),
            node("B", 547.0, 867.0, 10.0),
            node("N", 618.0, 644.0, 8.0),
            node("R", 448.0, 489.0, 10.0),
            node("X", 560.0, 278.0, 10.0),
            node("L", 772.0, 462.0, 9.0),
            node("M", 928.0, 280.0, 8.5),
            node("K", 743.0, 129.0, 9.0),
            node("P", 689.0, 387.0, 4.0),
            node("P1", 715.0, 664.0, 7.0),
        ],
        edges: vec![
            ("A", "B"),
            ("B", "N"),
            ("N", "R"),
            ("R", "X"),
            ("N", "L"),
            ("N", "P1"),
            ("L", "P1"),
            ("L", "M"),
            ("L", "P"),
            ("P", "X"),
            ("M", "K"),
            ("K", "X"),
        ],
    }
}

/// One row of the printed repair-score table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Row {
    pub node: &'static str,
    pub ctx: RepairContext,
    pub printed_total: f64,
}

fn row(node: &'static str, vn: u32, ttl: u32, hops: u32, power: f64, printed_total: f64) -> Table1Row {
    Table1Row {
        node,
        ctx: RepairContext {
            min_rpr_ttl: ttl,
            vn_count: vn,
            hops_to_sender: hops,
            power,
        },
        printed_total,
    }
}

pub fn table1() -> Vec<Table1Row> {
    vec![
        row("L", 3, 3, 1, 9.0, 15.0),
        row("M", 4, 2, 2, 8.5, 14.5),
        row("G", 3, 1, 3, 8.0, 12.0),
        row("P", 3, 1, 2, 4.0, 8.0),
        row("Q", 3, 1, 3, 3.0, 7.0),
        row("P1", 1, 4, 1, 7.0, 12.5),
        row("P2", 2, 3, 2, 7.0, 12.0),
        row("G1", 2, 1, 4, 7.5, 10.5),
        row("L1", 1, 3, 2, 8.0, 12.0),
    ]
}

#[derive(Debug, Clone)]
pub struct Fig1Outcome {
    pub discovered: Option<String>,
    pub repaired: Option<String>,
    /// Nodes recorded as virtual nodes in E's entry for D.
    pub e_vns_for_d: Vec<String>,
    pub trace: String,
}

/// Discovery from A to D, then G is switched off and H repairs around it.
pub fn run_fig1() -> Result<Fig1Outcome, SimError> {
    let fx = fig1();
    let mut cfg = fx.config(8.0);
    fx.flow(&mut cfg, "A", "D", 0.5, 7.5);
    fx.event(&mut cfg, "G", 3.0, false);
    let (a, d, e) = (fx.id("A"), fx.id("D"), fx.id("E"));
    let mut sim = Simulation::new(cfg)?;
    sim.enable_trace();
    sim.run_until(SimTime::from_millis(2900))?;
    let discovered = sim.route_path(a, d).map(|p| fx.path_string(&p));
    let e_vns_for_d = sim
        .node(e)
        .table()
        .get(d)
        .map(|entry| {
            entry
                .virtual_nodes
                .iter()
                .map(|v| fx.name(v.node).to_string())
                .collect()
        })
        .unwrap_or_default();
    sim.run_until(SimTime::from_secs(6))?;
    let repaired = sim.route_path(a, d).map(|p| fx.path_string(&p));
    sim.run_until(SimTime::from_secs(8))?;
    let trace = sim.trace_text().unwrap_or_default().to_string();
    Ok(Fig1Outcome {
        discovered,
        repaired,
        e_vns_for_d,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub node: String,
    pub score: f64,
    pub zone: PowerZone,
}

#[derive(Debug, Clone)]
pub struct Fig2Outcome {
    /// N's path to X just before R fails.
    pub before: Option<String>,
    /// N's repair candidates for X just before R fails.
    pub candidates: Vec<ScoredCandidate>,
    /// What the selector picks from those candidates.
    pub selected: Option<String>,
    /// The first hop and score of N's repair request, from the trace.
    pub repair_via: Option<String>,
    pub repair_score: Option<f64>,
    /// N's path to X once the repair has settled.
    pub repaired: Option<String>,
    pub trace: String,
}

/// R joins and carries the A-X flow; background flows from L and P1 give N
/// two neighbours with routes to X. Then R fails.
pub fn run_fig2() -> Result<Fig2Outcome, SimError> {
    let fx = fig2();
    let mut cfg = fx.config(14.0);
    fx.flow(&mut cfg, "L", "X", 1.0, 13.5);
    fx.flow(&mut cfg, "P1", "X", 1.5, 13.5);
    fx.flow(&mut cfg, "A", "X", 5.0, 13.5);
    fx.event(&mut cfg, "R", 4.0, true);
    fx.event(&mut cfg, "R", 10.0, false);
    let (n, x) = (fx.id("N"), fx.id("X"));
    let mut sim = Simulation::new(cfg)?;
    sim.enable_trace();
    sim.run_until(SimTime::from_millis(9990))?;
    let before = sim.route_path(n, x).map(|p| fx.path_string(&p));
    let raw = sim.node(n).virtual_node_candidates(sim.now(), x);
    let candidates = raw
        .iter()
        .map(|c| ScoredCandidate {
            node: fx.name(c.node).to_string(),
            score: compute_eq1(&c.ctx),
            zone: c.zone,
        })
        .collect();
    let selected = select_repair_next_hop(&raw).map(|id| fx.name(id).to_string());
    sim.run_until(SimTime::from_secs(14))?;
    let repaired = sim.route_path(n, x).map(|p| fx.path_string(&p));
    let trace = sim.trace_text().unwrap_or_default().to_string();
    let start = trace.lines().filter_map(parse_line).find(|l| {
        l.kind == TraceKind::RepairStart && l.node == n && l.get("dest") == Some(x.to_string().as_str())
    });
    let repair_via = start
        .as_ref()
        .and_then(|l| l.get("via"))
        .and_then(|v| v.parse::<u32>().ok())
        .map(|v| fx.name(NodeId(v)).to_string());
    let repair_score = start.as_ref().and_then(|l| l.get("score")).and_then(|s| s.parse().ok());
    Ok(Fig2Outcome {
        before,
        candidates,
        selected,
        repair_via,
        repair_score,
        repaired,
        trace,
    })
}

/// Selection over the table's L, P1 and P rows, P being below the Active
/// threshold.
pub fn table1_selection() -> Option<&'static str> {
    let zones = crate::energy::ZoneThresholds::default();
    let rows = table1();
    let cands: Vec<RepairCandidate> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.node, "L" | "P1" | "P"))
        .map(|(i, r)| RepairCandidate {
            node: NodeId(i as u32),
            ctx: r.ctx,
            zone: zones.zone_of(r.ctx.power),
        })
        .collect();
    select_repair_next_hop(&cands).map(|id| rows[id.index()].node)
}
