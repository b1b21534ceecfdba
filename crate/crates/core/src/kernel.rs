//! Discrete-event kernel: integer-microsecond clock, a deterministic event
//! queue and seeded random streams.
//!
//! Events are totally ordered by `(fire_at, insertion sequence)`, so two runs
//! that schedule the same events in the same order execute them in the same
//! order. Randomness comes from ChaCha8 streams; every node gets its own
//! substream keyed by `seed ^ node_id` so that adding a node never perturbs
//! the draws of the others.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulation time in whole microseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative and NaN inputs map to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            SimTime(0)
        } else {
            SimTime((s * 1e6).round() as u64)
        }
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Coarse classification of scheduled events, used for tracing and counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Timer,
    FrameArrival,
    MobilityStep,
    TrafficTick,
    MetricsFlush,
}

/// Who an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventTarget {
    Node(crate::NodeId),
    Global,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("event scheduled at t={at}us, before the current time t={now}us")]
    ScheduledInPast { at: SimTime, now: SimTime },
    #[error("invalid uniform interval [{lo}, {hi})")]
    InvalidInterval { lo: f64, hi: f64 },
}

/// Opaque handle returned by [`Scheduler::schedule`]; used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Deterministic event queue with a monotone clock.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Enqueues `payload` to fire at `at`. Events with equal `at` fire in
    /// insertion order.
    pub fn schedule(&mut self, payload: E, at: SimTime) -> Result<EventHandle, KernelError> {
        if at < self.now {
            return Err(KernelError::ScheduledInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, payload });
        Ok(EventHandle(seq))
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq || !self.heap.iter().any(|e| e.seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Pops the next live event with `fire_at <= until`, advancing the clock.
    pub fn pop_due(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        loop {
            let head = self.heap.peek()?;
            if head.at > until {
                return None;
            }
            let entry = self.heap.pop().expect("peeked entry");
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            self.now = entry.at;
            return Some((entry.at, entry.payload));
        }
    }

    /// Moves the clock forward to `t` without executing anything. Fails if an
    /// event due before `t` is still queued.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), KernelError> {
        if let Some(head) = self.heap.peek() {
            if head.at < t && !self.cancelled.contains(&head.seq) {
                return Err(KernelError::ScheduledInPast { at: head.at, now: t });
            }
        }
        if t > self.now {
            self.now = t;
        }
        Ok(())
    }

    /// Executes every event with `fire_at <= until` in `(fire_at, insertion)`
    /// order, then sets the clock to `until`. The handler may schedule
    /// further events through the scheduler it is given.
    pub fn run<F, Er>(&mut self, until: SimTime, mut handler: F) -> Result<u64, Er>
    where
        F: FnMut(&mut Self, SimTime, E) -> Result<(), Er>,
    {
        let mut executed = 0u64;
        while let Some((at, payload)) = self.pop_due(until) {
            handler(self, at, payload)?;
            executed += 1;
        }
        if until > self.now {
            self.now = until;
        }
        Ok(executed)
    }
}

/// Seeded pseudo-random stream (ChaCha8).
///
/// The global stream uses ChaCha stream id 0 with the run seed; per-node
/// substreams use stream id 1 keyed by `seed ^ node_id`.
#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn substream(seed: u64, node: crate::NodeId) -> Self {
        let key = seed ^ u64::from(node.0);
        let mut inner = ChaCha8Rng::seed_from_u64(key);
        inner.set_stream(1);
        SimRng { seed: key, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The same key on another ChaCha stream, for a second independent
    /// sequence per node.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.inner.set_stream(stream);
        self
    }

    /// Uniform draw in `[lo, hi)`; `lo == hi` returns `lo`.
    pub fn rand_uniform(&mut self, lo: f64, hi: f64) -> Result<f64, KernelError> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(KernelError::InvalidInterval { lo, hi });
        }
        if lo == hi {
            return Ok(lo);
        }
        let u: f64 = self.inner.random();
        let v = lo + (hi - lo) * u;
        // Rounding can land exactly on `hi` for tiny intervals.
        Ok(if v >= hi { lo } else { v })
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }
}
