//! Line-oriented event trace: `t=<us> node=<id> ev=<NAME> k=v ...`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::kernel::SimTime;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    RreqTx,
    RreqDropDup,
    RreqDropPower,
    RrepTx,
    RrprTx,
    ErrTx,
    LinkBreak,
    RepairStart,
    RepairOk,
    RepairFail,
    DataTx,
    DataRx,
    DataDrop,
    VnAdd,
    VnEvict,
}

const ALL_KINDS: [TraceKind; 15] = [
    TraceKind::RreqTx,
    TraceKind::RreqDropDup,
    TraceKind::RreqDropPower,
    TraceKind::RrepTx,
    TraceKind::RrprTx,
    TraceKind::ErrTx,
    TraceKind::LinkBreak,
    TraceKind::RepairStart,
    TraceKind::RepairOk,
    TraceKind::RepairFail,
    TraceKind::DataTx,
    TraceKind::DataRx,
    TraceKind::DataDrop,
    TraceKind::VnAdd,
    TraceKind::VnEvict,
];

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::RreqTx => "RREQ_TX",
            TraceKind::RreqDropDup => "RREQ_DROP_DUP",
            TraceKind::RreqDropPower => "RREQ_DROP_POWER",
            TraceKind::RrepTx => "RREP_TX",
            TraceKind::RrprTx => "RRPR_TX",
            TraceKind::ErrTx => "ERR_TX",
            TraceKind::LinkBreak => "LINK_BREAK",
            TraceKind::RepairStart => "REPAIR_START",
            TraceKind::RepairOk => "REPAIR_OK",
            TraceKind::RepairFail => "REPAIR_FAIL",
            TraceKind::DataTx => "DATA_TX",
            TraceKind::DataRx => "DATA_RX",
            TraceKind::DataDrop => "DATA_DROP",
            TraceKind::VnAdd => "VN_ADD",
            TraceKind::VnEvict => "VN_EVICT",
        }
    }
}

impl FromStr for TraceKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        ALL_KINDS.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

/// An event as produced by a node, before the simulator stamps it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub kind: TraceKind,
    pub fields: Vec<(&'static str, String)>,
}

impl TraceEvent {
    pub fn new(kind: TraceKind) -> Self {
        TraceEvent {
            kind,
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, key: &'static str, value: impl fmt::Display) -> Self {
        self.fields.push((key, value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Appends one formatted line to `out`.
pub fn write_line(out: &mut String, t: SimTime, node: NodeId, ev: &TraceEvent) {
    let _ = write!(out, "t={} node={} ev={}", t.as_micros(), node, ev.kind.as_str());
    for (k, v) in &ev.fields {
        let _ = write!(out, " {k}={v}");
    }
    out.push('\n');
}

/// A trace line read back from text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub t: SimTime,
    pub node: NodeId,
    pub kind: TraceKind,
    pub fields: Vec<(String, String)>,
}

impl ParsedLine {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn parse_line(line: &str) -> Option<ParsedLine> {
    let mut t = None;
    let mut node = None;
    let mut kind = None;
    let mut fields = Vec::new();
    for tok in line.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "t" if t.is_none() => t = Some(SimTime::from_micros(v.parse().ok()?)),
            "node" if node.is_none() => node = Some(NodeId(v.parse().ok()?)),
            "ev" if kind.is_none() => kind = Some(v.parse().ok()?),
            _ => fields.push((k.to_string(), v.to_string())),
        }
    }
    Some(ParsedLine {
        t: t?,
        node: node?,
        kind: kind?,
        fields,
    })
}
