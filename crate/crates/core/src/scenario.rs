//! Scenario files: flat `key = value` lines with `#` comments.
//!
//! `flow`, `node`, `fail` and `join` may repeat; every other key may appear
//! once. Unknown keys are errors, with the closest known key suggested.
//!
//! ```text
//! node_count = 50
//! area_x = 700
//! area_y = 700
//! protocol = srvnp
//! flow = 0,7,4,512,1.0,60      # src,dst,rate_pps,payload_bytes,start_s,stop_s
//! node = 3,120.5,400,1.5       # id,x,y[,battery]
//! fail = 6,3.0                 # id,time_s
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::energy::{DrainRates, ZoneThresholds, MAX_CHARGE};
use crate::kernel::{SimRng, SimTime};
use crate::metrics::FlowSpec;
use crate::radio::{Area, Position};
use crate::routing::{Protocol, RoutingConfig};
use crate::{FlowId, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn global(key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobilityModel {
    RandomWaypoint,
    Static,
}

/// A pinned node placement.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub pos: Position,
    pub battery: Option<f64>,
}

/// A node switching off (`up = false`) or on at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEvent {
    pub node: NodeId,
    pub at: SimTime,
    pub up: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub area_x: f64,
    pub area_y: f64,
    pub node_count: u32,
    pub radio_range_m: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause_time_s: f64,
    pub sim_duration_s: f64,
    pub seed: u64,
    pub protocol: Protocol,
    pub mobility: MobilityModel,
    pub hop_latency_ms: f64,
    pub mobility_tick_ms: f64,

    /// Explicit flows; when empty, `flow_count` random flows are drawn.
    pub flows: Vec<FlowSpec>,
    pub flow_count: u32,
    pub flow_rate_pps: f64,
    pub flow_payload_bytes: u32,
    pub flow_start_s: f64,
    pub flow_start_jitter_s: f64,
    /// Defaults to `FLOW_DRAIN_S` before the simulation end, so packets
    /// still in flight are not counted as lost.
    pub flow_stop_s: Option<f64>,
    pub retx_retries: u32,
    pub retx_timeout_ms: f64,

    pub battery_init: f64,
    /// When set, initial levels are drawn uniformly from
    /// `[battery_init_min, battery_init]`.
    pub battery_init_min: Option<f64>,
    pub drain_tx: f64,
    pub drain_rx: f64,
    pub drain_idle: f64,
    pub zone_active_min: f64,
    pub zone_danger_max: f64,

    pub max_repair_distance: u32,
    pub repair_discovery_period_ms: f64,
    pub active_route_timeout_s: f64,
    pub vn_refresh_interval_s: f64,
    pub buffer_capacity: u32,
    pub net_diameter: u32,
    pub discovery_timeout_ms: f64,
    pub rreq_retries: u32,

    pub nodes: Vec<NodeSpec>,
    pub node_events: Vec<NodeEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let drain = DrainRates::default();
        let zones = ZoneThresholds::default();
        let r = RoutingConfig::default();
        ScenarioConfig {
            area_x: 1000.0,
            area_y: 1000.0,
            node_count: 100,
            radio_range_m: 250.0,
            speed_min: 1.0,
            speed_max: 20.0,
            pause_time_s: 0.0,
            sim_duration_s: 500.0,
            seed: 1,
            protocol: Protocol::Srvnp,
            mobility: MobilityModel::RandomWaypoint,
            hop_latency_ms: 2.0,
            mobility_tick_ms: 100.0,
            flows: Vec::new(),
            flow_count: 25,
            flow_rate_pps: 4.0,
            flow_payload_bytes: 512,
            flow_start_s: 1.0,
            flow_start_jitter_s: 10.0,
            flow_stop_s: None,
            retx_retries: 0,
            retx_timeout_ms: 1000.0,
            battery_init: MAX_CHARGE,
            battery_init_min: None,
            drain_tx: drain.tx,
            drain_rx: drain.rx,
            drain_idle: drain.idle_per_s,
            zone_active_min: zones.active_min,
            zone_danger_max: zones.danger_max,
            max_repair_distance: r.max_repair_distance,
            repair_discovery_period_ms: r.repair_discovery_period.as_secs_f64() * 1e3,
            active_route_timeout_s: r.active_route_timeout.as_secs_f64(),
            vn_refresh_interval_s: r.vn_refresh_interval.as_secs_f64(),
            buffer_capacity: r.buffer_capacity as u32,
            net_diameter: r.net_diameter,
            discovery_timeout_ms: r.discovery_timeout.as_secs_f64() * 1e3,
            rreq_retries: r.rreq_retries,
            nodes: Vec::new(),
            node_events: Vec::new(),
        }
    }
}

/// Every key a scenario file may contain.
/// Quiet tail at the end of a run in which generated flows no longer send.
pub const FLOW_DRAIN_S: f64 = 1.0;

pub const KNOWN_KEYS: &[&str] = &[
    "area_x",
    "area_y",
    "node_count",
    "radio_range_m",
    "speed_min",
    "speed_max",
    "pause_time_s",
    "sim_duration_s",
    "seed",
    "protocol",
    "mobility",
    "hop_latency_ms",
    "mobility_tick_ms",
    "flow",
    "flow_count",
    "flow_rate_pps",
    "flow_payload_bytes",
    "flow_start_s",
    "flow_start_jitter_s",
    "flow_stop_s",
    "retx_retries",
    "retx_timeout_ms",
    "battery_init",
    "battery_init_min",
    "drain_tx",
    "drain_rx",
    "drain_idle",
    "zone_active_min",
    "zone_danger_max",
    "max_repair_distance",
    "repair_discovery_period_ms",
    "active_route_timeout_s",
    "vn_refresh_interval_s",
    "buffer_capacity",
    "net_diameter",
    "discovery_timeout_ms",
    "rreq_retries",
    "node",
    "fail",
    "join",
];

const REPEATABLE: &[&str] = &["flow", "node", "fail", "join"];

fn suggest(key: &str) -> Option<&'static str> {
    KNOWN_KEYS
        .iter()
        .map(|k| (strsim::damerau_levenshtein(key, k), *k))
        .filter(|(d, _)| *d <= 3)
        .min()
        .map(|(_, k)| k)
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError::at(line, key, format!("cannot parse `{}`", v.trim())))
}

fn parse_list(line: usize, key: &str, v: &str, min: usize, max: usize) -> Result<Vec<String>, ConfigError> {
    let parts: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
    if parts.len() < min || parts.len() > max {
        let want = if min == max {
            format!("{min}")
        } else {
            format!("{min} to {max}")
        };
        return Err(ConfigError::at(
            line,
            key,
            format!("expected {want} comma-separated fields, got {}", parts.len()),
        ));
    }
    Ok(parts)
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::global(&path.display().to_string(), format!("cannot read file: {e}"))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut seen = BTreeSet::new();
        let mut key_lines = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(ConfigError::at(line, content, "expected `key = value`"));
            };
            let key = k.trim();
            let value = v.trim();
            if !KNOWN_KEYS.contains(&key) {
                let msg = match suggest(key) {
                    Some(s) => format!("unknown key (did you mean `{s}`?)"),
                    None => "unknown key".to_string(),
                };
                return Err(ConfigError::at(line, key, msg));
            }
            if !REPEATABLE.contains(&key) && !seen.insert(key.to_string()) {
                return Err(ConfigError::at(line, key, "key given more than once"));
            }
            key_lines.insert(key.to_string(), line);
            cfg.set(line, key, value)?;
        }
        cfg.validate_with(|k| key_lines.get(k).copied())?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "area_x" => self.area_x = parse_num(line, key, v)?,
            "area_y" => self.area_y = parse_num(line, key, v)?,
            "node_count" => self.node_count = parse_num(line, key, v)?,
            "radio_range_m" => self.radio_range_m = parse_num(line, key, v)?,
            "speed_min" => self.speed_min = parse_num(line, key, v)?,
            "speed_max" => self.speed_max = parse_num(line, key, v)?,
            "pause_time_s" => self.pause_time_s = parse_num(line, key, v)?,
            "sim_duration_s" => self.sim_duration_s = parse_num(line, key, v)?,
            "seed" => self.seed = parse_num(line, key, v)?,
            "protocol" => {
                self.protocol = v.parse().map_err(|e: String| ConfigError::at(line, key, e))?
            }
            "mobility" => {
                self.mobility = match v {
                    "random_waypoint" => MobilityModel::RandomWaypoint,
                    "static" => MobilityModel::Static,
                    _ => {
                        return Err(ConfigError::at(
                            line,
                            key,
                            format!("unknown model `{v}` (expected random_waypoint or static)"),
                        ))
                    }
                }
            }
            "hop_latency_ms" => self.hop_latency_ms = parse_num(line, key, v)?,
            "mobility_tick_ms" => self.mobility_tick_ms = parse_num(line, key, v)?,
            "flow" => {
                let p = parse_list(line, key, v, 6, 6)?;
                let id = FlowId(self.flows.len() as u32);
                self.flows.push(FlowSpec {
                    id,
                    src: NodeId(parse_num(line, key, &p[0])?),
                    dst: NodeId(parse_num(line, key, &p[1])?),
                    rate: parse_num(line, key, &p[2])?,
                    payload: parse_num(line, key, &p[3])?,
                    start: secs(line, key, parse_num(line, key, &p[4])?)?,
                    stop: secs(line, key, parse_num(line, key, &p[5])?)?,
                });
            }
            "flow_count" => self.flow_count = parse_num(line, key, v)?,
            "flow_rate_pps" => self.flow_rate_pps = parse_num(line, key, v)?,
            "flow_payload_bytes" => self.flow_payload_bytes = parse_num(line, key, v)?,
            "flow_start_s" => self.flow_start_s = parse_num(line, key, v)?,
            "flow_start_jitter_s" => self.flow_start_jitter_s = parse_num(line, key, v)?,
            "flow_stop_s" => self.flow_stop_s = Some(parse_num(line, key, v)?),
            "retx_retries" => self.retx_retries = parse_num(line, key, v)?,
            "retx_timeout_ms" => self.retx_timeout_ms = parse_num(line, key, v)?,
            "battery_init" => self.battery_init = parse_num(line, key, v)?,
            "battery_init_min" => self.battery_init_min = Some(parse_num(line, key, v)?),
            "drain_tx" => self.drain_tx = parse_num(line, key, v)?,
            "drain_rx" => self.drain_rx = parse_num(line, key, v)?,
            "drain_idle" => self.drain_idle = parse_num(line, key, v)?,
            "zone_active_min" => self.zone_active_min = parse_num(line, key, v)?,
            "zone_danger_max" => self.zone_danger_max = parse_num(line, key, v)?,
            "max_repair_distance" => self.max_repair_distance = parse_num(line, key, v)?,
            "repair_discovery_period_ms" => self.repair_discovery_period_ms = parse_num(line, key, v)?,
            "active_route_timeout_s" => self.active_route_timeout_s = parse_num(line, key, v)?,
            "vn_refresh_interval_s" => self.vn_refresh_interval_s = parse_num(line, key, v)?,
            "buffer_capacity" => self.buffer_capacity = parse_num(line, key, v)?,
            "net_diameter" => self.net_diameter = parse_num(line, key, v)?,
            "discovery_timeout_ms" => self.discovery_timeout_ms = parse_num(line, key, v)?,
            "rreq_retries" => self.rreq_retries = parse_num(line, key, v)?,
            "node" => {
                let p = parse_list(line, key, v, 3, 4)?;
                let battery = match p.get(3) {
                    Some(b) => Some(parse_num(line, key, b)?),
                    None => None,
                };
                self.nodes.push(NodeSpec {
                    id: NodeId(parse_num(line, key, &p[0])?),
                    pos: Position::new(parse_num(line, key, &p[1])?, parse_num(line, key, &p[2])?),
                    battery,
                });
            }
            "fail" | "join" => {
                let p = parse_list(line, key, v, 2, 2)?;
                self.node_events.push(NodeEvent {
                    node: NodeId(parse_num(line, key, &p[0])?),
                    at: secs(line, key, parse_num(line, key, &p[1])?)?,
                    up: key == "join",
                });
            }
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Checks cross-field constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with(|_| None)
    }

    fn validate_with(&self, line_of: impl Fn(&str) -> Option<usize>) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| ConfigError {
            line: line_of(key),
            key: key.to_string(),
            message: msg,
        };
        let positive = [
            ("area_x", self.area_x),
            ("area_y", self.area_y),
            ("radio_range_m", self.radio_range_m),
            ("sim_duration_s", self.sim_duration_s),
            ("mobility_tick_ms", self.mobility_tick_ms),
            ("flow_rate_pps", self.flow_rate_pps),
            ("active_route_timeout_s", self.active_route_timeout_s),
            ("vn_refresh_interval_s", self.vn_refresh_interval_s),
            ("repair_discovery_period_ms", self.repair_discovery_period_ms),
            ("discovery_timeout_ms", self.discovery_timeout_ms),
            ("retx_timeout_ms", self.retx_timeout_ms),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(err(k, format!("must be a positive number, got {v}")));
            }
        }
        let non_negative = [
            ("speed_min", self.speed_min),
            ("pause_time_s", self.pause_time_s),
            ("hop_latency_ms", self.hop_latency_ms),
            ("flow_start_s", self.flow_start_s),
            ("flow_start_jitter_s", self.flow_start_jitter_s),
            ("drain_tx", self.drain_tx),
            ("drain_rx", self.drain_rx),
            ("drain_idle", self.drain_idle),
        ];
        for (k, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(k, format!("must be a non-negative number, got {v}")));
            }
        }
        if self.node_count < 2 {
            return Err(err("node_count", format!("must be at least 2, got {}", self.node_count)));
        }
        if self.speed_min > self.speed_max {
            return Err(err(
                "speed_min",
                format!(
                    "speed_min ({}) exceeds speed_max ({})",
                    self.speed_min, self.speed_max
                ),
            ));
        }
        if self.mobility == MobilityModel::RandomWaypoint && self.speed_max <= 0.0 {
            return Err(err("speed_max", "must be positive under random_waypoint".into()));
        }
        if self.net_diameter == 0 {
            return Err(err("net_diameter", "must be at least 1".into()));
        }
        for (k, v) in [("battery_init", Some(self.battery_init)), ("battery_init_min", self.battery_init_min)] {
            if let Some(v) = v {
                if !(0.0..=MAX_CHARGE).contains(&v) {
                    return Err(err(k, format!("must lie in [0, {MAX_CHARGE}], got {v}")));
                }
            }
        }
        if let Some(lo) = self.battery_init_min {
            if lo > self.battery_init {
                return Err(err(
                    "battery_init_min",
                    format!("battery_init_min ({lo}) exceeds battery_init ({})", self.battery_init),
                ));
            }
        }
        ZoneThresholds::new(self.zone_active_min, self.zone_danger_max)
            .map_err(|e| err("zone_active_min", e.to_string()))?;
        if let Some(stop) = self.flow_stop_s {
            if stop <= self.flow_start_s {
                return Err(err("flow_stop_s", "must be after flow_start_s".into()));
            }
        }
        if self.flows.is_empty() && self.flow_count > 0 && self.node_count < 2 {
            return Err(err("flow_count", "random flows need at least two nodes".into()));
        }
        for f in &self.flows {
            let e = |m: String| err("flow", format!("flow {}: {m}", f.id));
            if f.src.0 >= self.node_count || f.dst.0 >= self.node_count {
                return Err(e(format!("endpoint outside 0..{}", self.node_count)));
            }
            if f.src == f.dst {
                return Err(e("source equals destination".into()));
            }
            if !(f.rate.is_finite() && f.rate > 0.0) {
                return Err(e("rate must be positive".into()));
            }
            if f.start >= f.stop {
                return Err(e("start must precede stop".into()));
            }
        }
        let area = self.area();
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.0 >= self.node_count {
                return Err(err("node", format!("node id {} outside 0..{}", n.id, self.node_count)));
            }
            if !ids.insert(n.id) {
                return Err(err("node", format!("node {} placed twice", n.id)));
            }
            if !area.contains(&n.pos) {
                return Err(err("node", format!("node {} placed outside the area", n.id)));
            }
            if let Some(b) = n.battery {
                if !(0.0..=MAX_CHARGE).contains(&b) {
                    return Err(err("node", format!("node {} battery {b} outside [0, {MAX_CHARGE}]", n.id)));
                }
            }
        }
        for ev in &self.node_events {
            let k = if ev.up { "join" } else { "fail" };
            if ev.node.0 >= self.node_count {
                return Err(err(k, format!("node id {} outside 0..{}", ev.node, self.node_count)));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> Area {
        Area {
            width: self.area_x,
            height: self.area_y,
        }
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.sim_duration_s)
    }

    pub fn drain_rates(&self) -> DrainRates {
        DrainRates {
            tx: self.drain_tx,
            rx: self.drain_rx,
            idle_per_s: self.drain_idle,
        }
    }

    pub fn routing_config(&self) -> RoutingConfig {
        RoutingConfig {
            protocol: self.protocol,
            zones: ZoneThresholds {
                active_min: self.zone_active_min,
                danger_max: self.zone_danger_max,
            },
            active_route_timeout: SimTime::from_secs_f64(self.active_route_timeout_s),
            vn_refresh_interval: SimTime::from_secs_f64(self.vn_refresh_interval_s),
            max_repair_distance: self.max_repair_distance,
            repair_discovery_period: SimTime::from_secs_f64(self.repair_discovery_period_ms / 1e3),
            discovery_timeout: SimTime::from_secs_f64(self.discovery_timeout_ms / 1e3),
            rreq_retries: self.rreq_retries,
            net_diameter: self.net_diameter,
            buffer_capacity: self.buffer_capacity as usize,
            ..RoutingConfig::default()
        }
    }

    /// The explicit flows, or `flow_count` random ones drawn from the
    /// scenario seed: distinct endpoints, start jittered after
    /// `flow_start_s`.
    pub fn resolved_flows(&self) -> Vec<FlowSpec> {
        if !self.flows.is_empty() {
            return self.flows.clone();
        }
        let mut rng = SimRng::new(self.seed ^ 0x5eed_f10e);
        let stop_s = self
            .flow_stop_s
            .unwrap_or((self.sim_duration_s - FLOW_DRAIN_S).max(0.0));
        (0..self.flow_count)
            .map(|i| {
                let src = rng.below(self.node_count as usize) as u32;
                let mut dst = rng.below(self.node_count as usize - 1) as u32;
                if dst >= src {
                    dst += 1;
                }
                let jitter = rng.rand_uniform(0.0, self.flow_start_jitter_s).unwrap_or(0.0);
                let start_s = self.flow_start_s + jitter;
                FlowSpec {
                    id: FlowId(i),
                    src: NodeId(src),
                    dst: NodeId(dst),
                    rate: self.flow_rate_pps,
                    payload: self.flow_payload_bytes,
                    start: SimTime::from_secs_f64(start_s),
                    stop: SimTime::from_secs_f64(stop_s.max(start_s + 1.0 / self.flow_rate_pps)),
                }
            })
            .collect()
    }
}

fn secs(line: usize, key: &str, s: f64) -> Result<SimTime, ConfigError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(ConfigError::at(line, key, format!("time {s} must be non-negative")));
    }
    Ok(SimTime::from_secs_f64(s))
}
