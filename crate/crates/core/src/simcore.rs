//! Discrete-event kernel.
//!
//! Events are ordered by `(fire_at, sequence)`; the sequence number is handed
//! out at scheduling time, so events sharing a timestamp fire in insertion
//! order. Every stochastic component draws from its own named [`RngStreams`]
//! entry so that adding a component never shifts the draws of another.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Milliseconds since scenario start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000)
    }

    pub const fn from_mins(m: u64) -> Self {
        SimTime(m * 60_000)
    }

    pub const fn from_hours(h: u64) -> Self {
        SimTime(h * 3_600_000)
    }

    pub const fn from_days(d: u64) -> Self {
        SimTime(d * 86_400_000)
    }

    pub const fn as_ms(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_hours_f64(self) -> f64 {
        self.0 as f64 / 3_600_000.0
    }

    pub fn saturating_add_ms(self, ms: u64) -> Self {
        SimTime(self.0.saturating_add(ms))
    }

    /// Milliseconds from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MessageDelivery,
    SensorTick,
    ControllerTick,
    LoadChange,
    PriceUpdate,
}

impl EventKind {
    fn code(self) -> u8 {
        match self {
            EventKind::MessageDelivery => 0,
            EventKind::SensorTick => 1,
            EventKind::ControllerTick => 2,
            EventKind::LoadChange => 3,
            EventKind::PriceUpdate => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: P,
}

/// Returned by [`Engine::schedule`]; pass to [`Engine::cancel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    ScheduledInPast { fire_at: SimTime, now: SimTime },
    #[error("unknown random stream '{0}'")]
    UnknownStream(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub events_processed: u64,
    pub final_time: SimTime,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.sequence == other.0.sequence
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, sequence) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.sequence).cmp(&(self.0.fire_at, self.0.sequence))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(hash, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Single-threaded event engine. `P` is the payload type, opaque to the kernel.
pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    cancelled: BTreeSet<u64>,
    processed: u64,
    digest: u64,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            processed: 0,
            digest: FNV_OFFSET,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    /// FNV-1a digest over `(fire_at, sequence, kind)` of every dispatched event.
    pub fn dispatch_digest(&self) -> u64 {
        self.digest
    }

    pub fn schedule(&mut self, fire_at: SimTime, kind: EventKind, payload: P) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduledInPast { fire_at, now: self.now });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { fire_at, sequence, kind, payload }));
        Ok(EventHandle(sequence))
    }

    /// Schedule `delay_ms` after the current clock.
    pub fn schedule_in(&mut self, delay_ms: u64, kind: EventKind, payload: P) -> EventHandle {
        let at = self.now.saturating_add_ms(delay_ms);
        // cannot be in the past
        self.schedule(at, kind, payload).expect("relative schedule")
    }

    /// Returns false if the event already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        let live = self.queue.iter().any(|q| q.0.sequence == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    /// Pop the next live event with `fire_at <= horizon` and advance the clock to it.
    pub fn next_event(&mut self, horizon: SimTime) -> Option<Event<P>> {
        loop {
            let head = self.queue.peek()?;
            if head.0.fire_at > horizon {
                return None;
            }
            let Queued(ev) = self.queue.pop()?;
            if self.cancelled.remove(&ev.sequence) {
                continue;
            }
            assert!(ev.fire_at >= self.now, "event dispatched behind the clock");
            self.now = ev.fire_at;
            self.processed += 1;
            let mut h = fnv1a(self.digest, &ev.fire_at.0.to_le_bytes());
            h = fnv1a(h, &ev.sequence.to_le_bytes());
            self.digest = fnv1a(h, &[ev.kind.code()]);
            return Some(ev);
        }
    }

    /// Dispatch every event with `fire_at <= horizon` in order, then park the
    /// clock at `horizon`. Events beyond the horizon stay queued.
    pub fn run_until<F>(&mut self, horizon: SimTime, mut handler: F) -> RunSummary
    where
        F: FnMut(&mut Engine<P>, Event<P>),
    {
        let before = self.processed;
        while let Some(ev) = self.next_event(horizon) {
            handler(self, ev);
        }
        if horizon > self.now {
            self.now = horizon;
        }
        RunSummary { events_processed: self.processed - before, final_time: self.now }
    }
}

/// Key into [`RngStreams`], returned by [`RngStreams::register`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey(usize);

/// Named, independent ChaCha8 streams derived from one scenario seed.
///
/// A stream's sequence depends only on `(seed, stream_id)`: the seed fills the
/// key and the FNV-1a hash of the label selects the ChaCha stream.
#[derive(Clone, Debug)]
pub struct RngStreams {
    seed: u64,
    names: BTreeMap<String, StreamKey>,
    streams: Vec<ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed, names: BTreeMap::new(), streams: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Idempotent: registering an existing label returns its key.
    pub fn register(&mut self, stream_id: &str) -> StreamKey {
        if let Some(k) = self.names.get(stream_id) {
            return *k;
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&self.seed.to_le_bytes());
        }
        // keep the key from being four identical words
        key[8] ^= 0x5a;
        key[16] ^= 0xa5;
        key[24] ^= 0x3c;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(fnv1a(FNV_OFFSET, stream_id.as_bytes()));
        let k = StreamKey(self.streams.len());
        self.streams.push(rng);
        self.names.insert(stream_id.to_string(), k);
        k
    }

    pub fn key(&self, stream_id: &str) -> Result<StreamKey, SimError> {
        self.names.get(stream_id).copied().ok_or_else(|| SimError::UnknownStream(stream_id.to_string()))
    }

    /// Next value in `[0, 1)` from a registered stream.
    pub fn draw_uniform(&mut self, stream_id: &str) -> Result<f64, SimError> {
        let k = self.key(stream_id)?;
        Ok(self.uniform(k))
    }

    pub fn uniform(&mut self, key: StreamKey) -> f64 {
        let bits = self.streams[key.0].next_u64() >> 11;
        bits as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, key: StreamKey, p: f64) -> bool {
        self.uniform(key) < p
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, key: StreamKey, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as f64;
        let off = libm::floor(self.uniform(key) * span) as i64;
        lo + off.min(hi - lo)
    }

    /// Box-Muller; consumes two uniforms per call.
    pub fn normal(&mut self, key: StreamKey, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.uniform(key);
        let u2 = self.uniform(key);
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2);
        mean + sd * z
    }
}
