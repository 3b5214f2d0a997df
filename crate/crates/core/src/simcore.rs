// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event engine.
//!
//! Events are processed in a total order: primary key is the firing time,
//! secondary key is the insertion ordinal. Cancellation is lazy: cancelled
//! entries stay in the heap and are skipped when popped.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulated time in seconds.
pub type Time = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TaskStart,
    TaskFinish,
    EnvStepFinish,
    RewardFinish,
    ModelUpdate,
    BufferPut,
    BufferGet,
    Abort,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TaskStart => "task_start",
            EventKind::TaskFinish => "task_finish",
            EventKind::EnvStepFinish => "env_step_finish",
            EventKind::RewardFinish => "reward_finish",
            EventKind::ModelUpdate => "model_update",
            EventKind::BufferPut => "buffer_put",
            EventKind::BufferGet => "buffer_get",
            EventKind::Abort => "abort",
        }
    }
}

/// Payloads carried by the engine describe themselves for the event log.
pub trait SimEvent {
    fn kind(&self) -> EventKind;
    /// Identifier of the entity (task, worker, step) the event concerns.
    fn entity(&self) -> u64;
}

struct Entry<E> {
    at: Time,
    id: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // Reversed so that the max-heap pops the earliest (at, id).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// An event popped from the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Fired<E> {
    pub id: EventId,
    pub at: Time,
    pub payload: E,
}

/// Handler verdict after processing one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Halt,
}

/// When [`Engine::run_until`] should return. Both limits may be combined;
/// a handler returning [`Flow::Halt`] acts as a predicate on world state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopCondition {
    pub max_events: Option<u64>,
    /// Events strictly after this time are left in the queue.
    pub until: Option<Time>,
}

impl StopCondition {
    pub fn queue_empty() -> Self {
        Self::default()
    }

    pub fn max_events(n: u64) -> Self {
        Self {
            max_events: Some(n),
            until: None,
        }
    }

    pub fn until(t: Time) -> Self {
        Self {
            max_events: None,
            until: Some(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub clock: Time,
    pub processed: u64,
    /// The queue ran dry before any other stop condition triggered.
    pub exhausted: bool,
    pub halted: bool,
}

pub struct Engine<E> {
    now: Time,
    next_id: u64,
    heap: BinaryHeap<Entry<E>>,
    pending: HashSet<u64>,
    processed: u64,
    log: Option<Vec<String>>,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_id: 1,
            heap: BinaryHeap::new(),
            pending: HashSet::new(),
            processed: 0,
            log: None,
        }
    }

    /// Enables the newline-delimited event log (`time,kind,entity`).
    pub fn with_event_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn is_pending(&self, id: EventId) -> bool {
        self.pending.contains(&id.0)
    }

    pub fn schedule(&mut self, payload: E, at: Time) -> Result<EventId> {
        if !at.is_finite() {
            return Err(Error::NonFiniteTime(at));
        }
        if at < self.now {
            return Err(Error::ScheduleInPast { at, now: self.now });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Entry { at, id, payload });
        self.pending.insert(id);
        Ok(EventId(id))
    }

    /// Schedules `payload` after a non-negative delay.
    pub fn schedule_in(&mut self, payload: E, delay: Time) -> Result<EventId> {
        self.schedule(payload, self.now + delay)
    }

    /// Returns true if the event was pending and is now removed.
    pub fn cancel(&mut self, id: EventId) -> bool {
        self.pending.remove(&id.0)
    }

    pub fn peek_time(&mut self) -> Option<Time> {
        self.drop_stale();
        self.heap.peek().map(|e| e.at)
    }

    fn drop_stale(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.pending.contains(&top.id) {
                break;
            }
            self.heap.pop();
        }
    }

    /// Takes the log lines accumulated so far.
    pub fn take_log(&mut self) -> Vec<String> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

impl<E: SimEvent> Engine<E> {
    /// Pops the next live event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Fired<E>> {
        self.drop_stale();
        let entry = self.heap.pop()?;
        self.pending.remove(&entry.id);
        debug_assert!(entry.at >= self.now);
        self.now = entry.at;
        self.processed += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(format!(
                "{},{},{}",
                entry.at,
                entry.payload.kind().as_str(),
                entry.payload.entity()
            ));
        }
        Some(Fired {
            id: EventId(entry.id),
            at: entry.at,
            payload: entry.payload,
        })
    }

    pub fn run_until<F>(&mut self, stop: StopCondition, mut handler: F) -> RunSummary
    where
        F: FnMut(&mut Engine<E>, Fired<E>) -> Flow,
    {
        let mut processed = 0u64;
        loop {
            if stop.max_events.is_some_and(|n| processed >= n) {
                return self.summary(processed, false, false);
            }
            let Some(next_at) = self.peek_time() else {
                return self.summary(processed, true, false);
            };
            if stop.until.is_some_and(|t| next_at > t) {
                return self.summary(processed, false, false);
            }
            let fired = self.pop().expect("peeked event present");
            processed += 1;
            if handler(self, fired) == Flow::Halt {
                return self.summary(processed, false, true);
            }
        }
    }

    fn summary(&self, processed: u64, exhausted: bool, halted: bool) -> RunSummary {
        RunSummary {
            clock: self.now,
            processed,
            exhausted,
            halted,
        }
    }
}

/// Seed and stream id of a ChaCha8 generator. Identical pairs give
/// identical draw sequences; distinct streams are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedState {
    pub seed: u64,
    pub stream: u64,
}

impl SeedState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Child stream named by a label and an index. Adding a new label never
    /// perturbs draws on existing ones.
    pub fn derive(&self, label: &str, index: u64) -> SeedState {
        let stream = mix64(self.stream ^ mix64(fnv1a(label.as_bytes())) ^ mix64(index.wrapping_add(0x9E37)));
        SeedState {
            seed: self.seed,
            stream,
        }
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed for sweep point `point`, repetition `rep`, derived from a master
/// seed. Points share common random numbers across the same repetition
/// when the caller passes the same `point` for paired comparisons.
pub fn point_seed(master: u64, point: u64, rep: u64) -> u64 {
    mix64(master ^ mix64(point.wrapping_mul(0xA24B_AED4_963E_E407)) ^ mix64(rep.wrapping_mul(0x9FB2_1C65_1E98_DF25).wrapping_add(1)))
}
