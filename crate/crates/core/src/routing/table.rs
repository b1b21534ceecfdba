//! Per-node routing table.
//!
//! Loop freedom rests on one rule: an Active entry is only replaced by a route
//! whose `(dest_seq, -hop_count)` is not worse, and every invalidation bumps
//! the stored sequence number so a dead route can only be revived by fresher
//! information from the destination.

use std::collections::{BTreeMap, BTreeSet};

use crate::kernel::SimTime;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteState {
    Active,
    Invalid,
    UnderRepair,
}

/// A one-hop neighbour that advertises a route to the entry's destination
/// (or is the destination).
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualNodeRecord {
    pub node: NodeId,
    /// Battery level the neighbour last advertised.
    pub power: f64,
    pub learned_at: SimTime,
    pub refreshed_at: SimTime,
    /// The neighbour's advertised hop count to the destination.
    pub hop_count: u32,
    /// The neighbour's own virtual-node count for the destination.
    pub vn_count: u32,
    /// The neighbour's next hop toward the destination; `None` when the
    /// neighbour is the destination.
    pub next_hop: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub state: RouteState,
    pub expires_at: SimTime,
    pub virtual_nodes: Vec<VirtualNodeRecord>,
    /// Hop count when the route was last valid; the repair score's base term.
    pub last_known_hop_count: u32,
    pub path_min_power: f64,
    /// Upstream neighbours that route through us for this destination.
    pub precursors: BTreeSet<NodeId>,
}

impl RouteEntry {
    pub fn is_active(&self, now: SimTime) -> bool {
        self.state == RouteState::Active && self.expires_at > now
    }

    pub fn vn(&self, node: NodeId) -> Option<&VirtualNodeRecord> {
        self.virtual_nodes.iter().find(|v| v.node == node)
    }
}

/// Result of offering a candidate route to the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteUpdate {
    Installed,
    Refreshed,
    Rejected,
}

impl RouteUpdate {
    pub fn accepted(self) -> bool {
        self != RouteUpdate::Rejected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteOffer {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub path_min_power: f64,
    pub expires_at: SimTime,
}

#[derive(Debug, Default, Clone)]
pub struct RouteTable {
    entries: BTreeMap<NodeId, RouteEntry>,
    changed: Vec<NodeId>,
}

impl RouteTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn get_mut(&mut self, dest: NodeId) -> Option<&mut RouteEntry> {
        self.entries.get_mut(&dest)
    }

    pub fn active(&self, dest: NodeId, now: SimTime) -> Option<&RouteEntry> {
        self.entries.get(&dest).filter(|e| e.is_active(now))
    }

    pub fn active_mut(&mut self, dest: NodeId, now: SimTime) -> Option<&mut RouteEntry> {
        self.entries.get_mut(&dest).filter(|e| e.is_active(now))
    }

    pub fn iter(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut RouteEntry> {
        self.entries.values_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Destinations whose Active next hop was (re)installed since the last call.
    pub fn take_changes(&mut self) -> Vec<NodeId> {
        std::mem::take(&mut self.changed)
    }

    /// Applies the update rule. Against an Active entry the offer must have a
    /// newer sequence number, or the same one with fewer hops, or the same
    /// hops with a strictly higher path power; an identical route through the
    /// same next hop only extends the lifetime. Against a missing or inactive
    /// entry the offer needs a sequence number at least the stored one.
    pub fn offer(&mut self, offer: RouteOffer, now: SimTime) -> RouteUpdate {
        let RouteOffer {
            dest,
            next_hop,
            hop_count,
            dest_seq,
            path_min_power,
            expires_at,
        } = offer;
        let update = match self.entries.get_mut(&dest) {
            None => {
                self.entries.insert(
                    dest,
                    RouteEntry {
                        dest,
                        next_hop,
                        hop_count,
                        dest_seq,
                        state: RouteState::Active,
                        expires_at,
                        virtual_nodes: Vec::new(),
                        last_known_hop_count: hop_count,
                        path_min_power,
                        precursors: BTreeSet::new(),
                    },
                );
                RouteUpdate::Installed
            }
            Some(e) => {
                if e.state == RouteState::Active && e.expires_at <= now {
                    // Lazily expired: same treatment as the periodic sweep.
                    e.state = RouteState::Invalid;
                    e.dest_seq = e.dest_seq.wrapping_add(1);
                }
                let active = e.state == RouteState::Active;
                let better = if active {
                    dest_seq > e.dest_seq
                        || (dest_seq == e.dest_seq
                            && (hop_count < e.hop_count
                                || (hop_count == e.hop_count && path_min_power > e.path_min_power)))
                } else {
                    dest_seq >= e.dest_seq
                };
                let same = active
                    && dest_seq == e.dest_seq
                    && hop_count == e.hop_count
                    && next_hop == e.next_hop;
                if better {
                    if e.next_hop != next_hop {
                        e.precursors.clear();
                    }
                    e.expires_at = if active { e.expires_at.max(expires_at) } else { expires_at };
                    e.next_hop = next_hop;
                    e.hop_count = hop_count;
                    e.dest_seq = dest_seq;
                    e.state = RouteState::Active;
                    e.last_known_hop_count = hop_count;
                    e.path_min_power = path_min_power;
                    RouteUpdate::Installed
                } else if same {
                    e.expires_at = e.expires_at.max(expires_at);
                    RouteUpdate::Refreshed
                } else {
                    RouteUpdate::Rejected
                }
            }
        };
        if update == RouteUpdate::Installed {
            self.changed.push(dest);
        }
        update
    }

    /// Marks the entry Invalid (or UnderRepair) and bumps its sequence number.
    pub fn invalidate(&mut self, dest: NodeId, state: RouteState) -> Option<u32> {
        let e = self.entries.get_mut(&dest)?;
        debug_assert!(state != RouteState::Active);
        if e.state == RouteState::Active {
            e.dest_seq = e.dest_seq.wrapping_add(1);
        }
        e.state = state;
        Some(e.dest_seq)
    }

    /// Invalidates every Active entry whose next hop is `next_hop`.
    /// Returns `(dest, bumped seq, had precursors)` for each.
    pub fn invalidate_via(&mut self, next_hop: NodeId, now: SimTime) -> Vec<(NodeId, u32, bool)> {
        let mut out = Vec::new();
        for e in self.entries.values_mut() {
            if e.is_active(now) && e.next_hop == next_hop {
                e.dest_seq = e.dest_seq.wrapping_add(1);
                e.state = RouteState::Invalid;
                out.push((e.dest, e.dest_seq, !e.precursors.is_empty()));
            }
        }
        out
    }

    /// Turns Active entries whose lifetime has run out into Invalid ones.
    pub fn expire(&mut self, now: SimTime) -> Vec<NodeId> {
        let mut out = Vec::new();
        for e in self.entries.values_mut() {
            if e.state == RouteState::Active && e.expires_at <= now {
                e.state = RouteState::Invalid;
                e.dest_seq = e.dest_seq.wrapping_add(1);
                out.push(e.dest);
            }
        }
        out
    }
}
