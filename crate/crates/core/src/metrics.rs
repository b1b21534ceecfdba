//! CBR traffic and the evaluation metrics.
//!
//! Delivery ratio is the mean of per-flow ratios, not total received over
//! total sent; the two differ when flows are uneven. Delay is averaged per
//! delivered packet. Throughput comes in two forms: bytes over simulated time,
//! and bytes over the summed per-packet delay.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::kernel::SimTime;
use crate::{FlowId, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("delivery ratio undefined: no flow sent any packet")]
    NoFlows,
    #[error("mean delay undefined: no packet was delivered")]
    NoDeliveries,
    #[error("simulation duration must be positive")]
    ZeroDuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    /// Packets per second.
    pub rate: f64,
    pub payload: u32,
    pub start: SimTime,
    pub stop: SimTime,
}

/// Constant-bit-rate emitter for one flow.
#[derive(Debug, Clone)]
pub struct CbrSource {
    spec: FlowSpec,
    next_seq: u32,
}

impl CbrSource {
    pub fn new(spec: FlowSpec) -> Self {
        CbrSource { spec, next_seq: 0 }
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    /// Send time of packet `seq`: `start + seq / rate`.
    pub fn emission_time(&self, seq: u32) -> SimTime {
        let offset = f64::from(seq) / self.spec.rate;
        self.spec.start + SimTime::from_secs_f64(offset)
    }

    /// Time of the next emission, or `None` once the flow has stopped.
    pub fn next_emission(&self) -> Option<SimTime> {
        let t = self.emission_time(self.next_seq);
        (t < self.spec.stop).then_some(t)
    }

    /// Emits the next packet if it is due at `now` and the flow is live.
    pub fn generate(&mut self, now: SimTime) -> Option<u32> {
        let t = self.next_emission()?;
        if now < self.spec.start || now >= self.spec.stop || t > now {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        Some(seq)
    }
}

/// Every packet the generator emitted up to `until`, as `(seq, send_time)`.
pub fn generate_traffic(spec: &FlowSpec, until: SimTime) -> Vec<(u32, SimTime)> {
    let mut src = CbrSource::new(spec.clone());
    let mut out = Vec::new();
    while let Some(t) = src.next_emission() {
        if t > until {
            break;
        }
        let seq = src.generate(t).expect("due emission");
        out.push((seq, t));
    }
    out
}

/// Per-flow accounting. `sent` holds the first send time of each sequence
/// number, `received` the first arrival.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowStats {
    pub payload: u32,
    pub sent: BTreeMap<u32, SimTime>,
    pub received: BTreeMap<u32, SimTime>,
    pub duplicates: u64,
}

impl FlowStats {
    pub fn new(payload: u32) -> Self {
        FlowStats {
            payload,
            ..FlowStats::default()
        }
    }

    pub fn record_send(&mut self, seq: u32, at: SimTime) {
        self.sent.entry(seq).or_insert(at);
    }

    /// Returns `false` for a duplicate (or for a sequence never sent).
    pub fn record_recv(&mut self, seq: u32, at: SimTime) -> bool {
        if !self.sent.contains_key(&seq) || self.received.contains_key(&seq) {
            self.duplicates += 1;
            return false;
        }
        self.received.insert(seq, at);
        true
    }

    pub fn sent_count(&self) -> u64 {
        self.sent.len() as u64
    }

    pub fn received_count(&self) -> u64 {
        self.received.len() as u64
    }

    pub fn bytes_received(&self) -> u64 {
        self.received_count() * u64::from(self.payload)
    }

    pub fn first_send(&self) -> Option<SimTime> {
        self.sent.values().min().copied()
    }

    pub fn last_recv(&self) -> Option<SimTime> {
        self.received.values().max().copied()
    }

    /// Per-packet delays in seconds, in sequence order.
    pub fn delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.received
            .iter()
            .map(|(seq, r)| (*r - self.sent[seq]).as_secs_f64())
    }
}

/// Mean over flows of received/sent; flows that sent nothing are skipped.
pub fn delivery_ratio(flows: &[FlowStats]) -> Result<f64, MetricsError> {
    let ratios: Vec<f64> = flows
        .iter()
        .filter(|f| f.sent_count() > 0)
        .map(|f| f.received_count() as f64 / f.sent_count() as f64)
        .collect();
    if ratios.is_empty() {
        return Err(MetricsError::NoFlows);
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Mean end-to-end delay in seconds over all delivered packets.
pub fn mean_delay(flows: &[FlowStats]) -> Result<f64, MetricsError> {
    mean_of(flows.iter().flat_map(FlowStats::delays))
}

/// Mean of an arbitrary list of per-packet delays.
pub fn mean_of(delays: impl IntoIterator<Item = f64>) -> Result<f64, MetricsError> {
    let (n, sum) = delays
        .into_iter()
        .fold((0u64, 0.0), |(n, s), d| (n + 1, s + d));
    if n == 0 {
        return Err(MetricsError::NoDeliveries);
    }
    Ok(sum / n as f64)
}

/// `(bytes / duration, bytes / total_delay)`. The second is `None` when the
/// summed delay is zero but bytes were delivered.
pub fn throughput(
    flows: &[FlowStats],
    sim_duration_s: f64,
    total_delay_s: f64,
) -> Result<(f64, Option<f64>), MetricsError> {
    if sim_duration_s <= 0.0 {
        return Err(MetricsError::ZeroDuration);
    }
    let bytes: u64 = flows.iter().map(FlowStats::bytes_received).sum();
    if bytes == 0 {
        return Ok((0.0, Some(0.0)));
    }
    let bytes = bytes as f64;
    let per_delay = (total_delay_s > 0.0).then(|| bytes / total_delay_s);
    Ok((bytes / sim_duration_s, per_delay))
}

/// Control-plane and repair tallies for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub rreq_tx: u64,
    pub rrep_tx: u64,
    pub err_tx: u64,
    pub beacon_tx: u64,
    pub repairs_attempted: u64,
    pub repairs_succeeded: u64,
    pub repairs_longer: u64,
    pub data_dropped: u64,
    pub duplicate_deliveries: u64,
    pub frames_tx: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub delivery_ratio: f64,
    /// Seconds; `None` when nothing was delivered.
    pub mean_delay: Option<f64>,
    pub throughput_std: f64,
    pub throughput_paper: Option<f64>,
    pub sent: u64,
    pub received: u64,
    pub counters: Counters,
}

impl MetricsReport {
    /// Builds the report from final accounting. A run in which no flow sent
    /// anything reports a delivery ratio of zero.
    pub fn from_flows(flows: &[FlowStats], sim_duration_s: f64, counters: Counters) -> Self {
        let delivery_ratio = delivery_ratio(flows).unwrap_or(0.0);
        let mean_delay = mean_delay(flows).ok();
        let total_delay: f64 = flows.iter().flat_map(FlowStats::delays).sum();
        let (throughput_std, throughput_paper) =
            throughput(flows, sim_duration_s, total_delay).unwrap_or((0.0, Some(0.0)));
        MetricsReport {
            delivery_ratio,
            mean_delay,
            throughput_std,
            throughput_paper,
            sent: flows.iter().map(FlowStats::sent_count).sum(),
            received: flows.iter().map(FlowStats::received_count).sum(),
            counters,
        }
    }
}
