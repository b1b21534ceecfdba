use std::collections::{BTreeMap, VecDeque};

use super::message::DataPacket;
use crate::NodeId;

/// Per-destination FIFO of data awaiting a route. Overflow drops the oldest
/// packet.
#[derive(Debug, Clone)]
pub struct PendingBuffer {
    capacity: usize,
    queues: BTreeMap<NodeId, VecDeque<DataPacket>>,
}

impl PendingBuffer {
    pub fn new(capacity: usize) -> Self {
        PendingBuffer {
            capacity,
            queues: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Queues `pkt`; returns the packet evicted to make room, if any.
    pub fn push(&mut self, dest: NodeId, pkt: DataPacket) -> Option<DataPacket> {
        if self.capacity == 0 {
            return Some(pkt);
        }
        let q = self.queues.entry(dest).or_default();
        let evicted = if q.len() >= self.capacity {
            q.pop_front()
        } else {
            None
        };
        q.push_back(pkt);
        evicted
    }

    pub fn take(&mut self, dest: NodeId) -> Vec<DataPacket> {
        self.queues
            .remove(&dest)
            .map(Vec::from)
            .unwrap_or_default()
    }

    pub fn len(&self, dest: NodeId) -> usize {
        self.queues.get(&dest).map_or(0, VecDeque::len)
    }

    pub fn has(&self, dest: NodeId) -> bool {
        self.len(dest) > 0
    }

    pub fn total(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}
