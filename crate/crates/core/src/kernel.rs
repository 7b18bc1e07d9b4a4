//! Simulation clock, deterministic event queue and seeded random streams.
//!
//! Events are dequeued in the total order `(time, actor_id, sequence)` where the
//! sequence counter increases with every `schedule` call. Continuous state is
//! owned by a [`World`], which the kernel asks to integrate up to every event
//! time before the event is handled.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("epoch {0} is not a finite non-negative offset")]
    InvalidEpoch(f64),
    #[error("event at t={event} s scheduled in the past (clock at t={clock} s)")]
    InPast { event: f64, clock: f64 },
}

/// Seconds since scenario start.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epoch(f64);

impl Epoch {
    pub const ZERO: Epoch = Epoch(0.0);

    pub fn new(seconds: f64) -> Result<Self, KernelError> {
        if seconds.is_finite() && seconds >= 0.0 {
            Ok(Epoch(seconds))
        } else {
            Err(KernelError::InvalidEpoch(seconds))
        }
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub(crate) fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub u32);

impl ActorId {
    /// Pseudo-actor owning kernel-internal bookkeeping events.
    pub const SYSTEM: ActorId = ActorId(0);
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    WindowOpen,
    WindowClose,
    TransferComplete,
    ActivityStart,
    ActivityEnd,
    ActivityRefused,
    Fault,
    RoundEvent,
    EclipseEnter,
    EclipseExit,
    PowerBlackout,
    ThermalViolation,
    Saturation,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::WindowOpen => "window-open",
            EventKind::WindowClose => "window-close",
            EventKind::TransferComplete => "transfer-complete",
            EventKind::ActivityStart => "activity-start",
            EventKind::ActivityEnd => "activity-end",
            EventKind::ActivityRefused => "activity-refused",
            EventKind::Fault => "fault",
            EventKind::RoundEvent => "round-event",
            EventKind::EclipseEnter => "eclipse-enter",
            EventKind::EclipseExit => "eclipse-exit",
            EventKind::PowerBlackout => "power-blackout",
            EventKind::ThermalViolation => "thermal-violation",
            EventKind::Saturation => "saturation",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Payload = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: Epoch,
    pub actor_id: ActorId,
    pub kind: EventKind,
    pub payload: Payload,
}

impl EventRecord {
    pub fn new(time: Epoch, actor_id: ActorId, kind: EventKind) -> Self {
        Self {
            time,
            actor_id,
            kind,
            payload: Payload::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.payload.insert(key.to_string(), value.to_string());
        self
    }

    /// Payload flattened as `k=v;k=v` in key order.
    pub fn flat_payload(&self) -> String {
        self.payload
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event record serializes")
    }

    pub(crate) fn order_key(&self) -> (Epoch, ActorId) {
        (self.time, self.actor_id)
    }
}

/// Sorts records by `(time, actor_id)`, keeping emission order among ties.
pub fn sort_records(records: &mut [EventRecord]) {
    records.sort_by(|a, b| {
        let (ta, aa) = a.order_key();
        let (tb, ab) = b.order_key();
        ta.total_cmp(&tb).then(aa.cmp(&ab))
    });
}

struct Entry<E> {
    time: Epoch,
    actor: ActorId,
    seq: u64,
    event: E,
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
    // Reversed so that `BinaryHeap` pops the smallest key first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.actor.cmp(&self.actor))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Clock plus pending events. Handed to [`World::handle`] so that handlers can
/// schedule follow-up events.
pub struct Scheduler<E> {
    now: Epoch,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self {
            now: Epoch::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }
}

impl<E> Scheduler<E> {
    pub fn now(&self) -> Epoch {
        self.now
    }

    pub fn schedule(&mut self, time: Epoch, actor: ActorId, event: E) -> Result<u64, KernelError> {
        if time.total_cmp(&self.now) == Ordering::Less {
            return Err(KernelError::InPast {
                event: time.seconds(),
                clock: self.now.seconds(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            time,
            actor,
            seq,
            event,
        });
        Ok(seq)
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn next_time(&self) -> Option<Epoch> {
        self.heap.peek().map(|e| e.time)
    }

    fn pop_due(&mut self, until: Epoch) -> Option<Entry<E>> {
        match self.heap.peek() {
            Some(e) if e.time.total_cmp(&until) != Ordering::Greater => self.heap.pop(),
            _ => None,
        }
    }
}

/// Continuous state driven by the kernel.
pub trait World<E> {
    /// Brings continuous state up to `to` and returns records emitted on the way.
    fn integrate(&mut self, to: Epoch) -> Vec<EventRecord>;

    /// Handles one dequeued event and returns the records to log.
    fn handle(
        &mut self,
        actor: ActorId,
        event: E,
        scheduler: &mut Scheduler<E>,
    ) -> Vec<EventRecord>;
}

/// Plain event replay: every scheduled record is logged as-is.
pub struct Replay;

impl World<EventRecord> for Replay {
    fn integrate(&mut self, _to: Epoch) -> Vec<EventRecord> {
        Vec::new()
    }

    fn handle(
        &mut self,
        _actor: ActorId,
        event: EventRecord,
        _scheduler: &mut Scheduler<EventRecord>,
    ) -> Vec<EventRecord> {
        vec![event]
    }
}

/// Single-threaded owner of the simulation clock.
pub struct Kernel<E = EventRecord> {
    scheduler: Scheduler<E>,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self {
            scheduler: Scheduler::default(),
        }
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> Epoch {
        self.scheduler.now
    }

    pub fn scheduler_mut(&mut self) -> &mut Scheduler<E> {
        &mut self.scheduler
    }

    pub fn pending(&self) -> usize {
        self.scheduler.pending()
    }

    /// Executes every event with `time <= t` in queue order, integrating the
    /// world across each gap, and leaves the clock at `t`.
    pub fn advance_with<W: World<E>>(
        &mut self,
        t: Epoch,
        world: &mut W,
    ) -> Result<Vec<EventRecord>, KernelError> {
        if t.total_cmp(&self.scheduler.now) == Ordering::Less {
            return Err(KernelError::InPast {
                event: t.seconds(),
                clock: self.scheduler.now.seconds(),
            });
        }
        let mut out = Vec::new();
        while let Some(entry) = self.scheduler.pop_due(t) {
            let mut emitted = world.integrate(entry.time);
            sort_records(&mut emitted);
            out.append(&mut emitted);
            self.scheduler.now = entry.time;
            out.extend(world.handle(entry.actor, entry.event, &mut self.scheduler));
        }
        let mut emitted = world.integrate(t);
        sort_records(&mut emitted);
        out.append(&mut emitted);
        self.scheduler.now = t;
        Ok(out)
    }
}

impl Kernel<EventRecord> {
    pub fn schedule(&mut self, event: EventRecord) -> Result<(), KernelError> {
        let (time, actor) = (event.time, event.actor_id);
        self.scheduler.schedule(time, actor, event).map(|_| ())
    }

    pub fn advance_to(&mut self, t: Epoch) -> Result<Vec<EventRecord>, KernelError> {
        self.advance_with(t, &mut Replay)
    }
}

/// Identifies one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(pub u64);

impl StreamId {
    pub fn for_actor(actor: ActorId, tag: u8) -> Self {
        StreamId(((actor.0 as u64) << 8) | tag as u64)
    }
}

/// ChaCha8 stream keyed by `(seed, stream_id)`; identical draws on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: StreamId,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream.0);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ev(t: f64, actor: u32, tag: &str) -> EventRecord {
        EventRecord::new(Epoch::new(t).unwrap(), ActorId(actor), EventKind::Fault).with("tag", tag)
    }

    #[test]
    fn equal_time_tie_breaks_by_actor() {
        let mut k = Kernel::new();
        k.schedule(ev(5.0, 2, "b")).unwrap();
        k.schedule(ev(5.0, 1, "a")).unwrap();
        let out = k.advance_to(Epoch::new(10.0).unwrap()).unwrap();
        assert_eq!(out[0].actor_id, ActorId(1));
        assert_eq!(out[1].actor_id, ActorId(2));
    }

    #[test]
    fn same_actor_ties_keep_insertion_order() {
        let mut k = Kernel::new();
        for tag in ["x", "y", "z"] {
            k.schedule(ev(1.0, 3, tag)).unwrap();
        }
        let tags: Vec<_> = k
            .advance_to(Epoch::new(1.0).unwrap())
            .unwrap()
            .into_iter()
            .map(|e| e.payload["tag"].clone())
            .collect();
        assert_eq!(tags, ["x", "y", "z"]);
    }

    #[test]
    fn event_at_clock_runs_before_advancing() {
        let mut k = Kernel::new();
        k.advance_to(Epoch::new(3.0).unwrap()).unwrap();
        k.schedule(ev(3.0, 1, "now")).unwrap();
        let out = k.advance_to(Epoch::new(3.0).unwrap()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(k.clock().seconds(), 3.0);
    }

    #[test]
    fn past_events_are_rejected() {
        let mut k = Kernel::new();
        k.advance_to(Epoch::new(3.0).unwrap()).unwrap();
        assert!(matches!(k.schedule(ev(2.0, 1, "old")), Err(KernelError::InPast { .. })));
        assert!(k.advance_to(Epoch::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn empty_advance_is_empty() {
        let mut k: Kernel = Kernel::new();
        assert!(k.advance_to(Epoch::ZERO).unwrap().is_empty());
    }

    #[test]
    fn advance_past_single_fault() {
        let mut k = Kernel::new();
        k.schedule(ev(7.5, 4, "seu")).unwrap();
        let out = k.advance_to(Epoch::new(8.0).unwrap()).unwrap();
        assert_eq!(out, vec![ev(7.5, 4, "seu")]);
        assert!(k.advance_to(Epoch::new(100.0).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn invalid_epochs() {
        assert!(Epoch::new(-1.0).is_err());
        assert!(Epoch::new(f64::NAN).is_err());
        assert!(Epoch::new(f64::INFINITY).is_err());
    }

    #[test]
    fn ten_thousand_random_events_match_sort_oracle() {
        let mut rng = SeededRng::new(99, StreamId(0));
        let mut k = Kernel::new();
        let mut reference = Vec::new();
        for i in 0..10_000u64 {
            // coarse times so that ties are common
            let t = (rng.random_range(0..500u32) as f64) * 0.5;
            let actor = rng.random_range(1..8u32);
            let e = ev(t, actor, &i.to_string());
            reference.push((t, actor, i, e.clone()));
            k.schedule(e).unwrap();
        }
        reference.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let out = k.advance_to(Epoch::new(1e4).unwrap()).unwrap();
        let expected: Vec<_> = reference.into_iter().map(|r| r.3).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let draw = |seed, stream| {
            let mut r = SeededRng::new(seed, StreamId(stream));
            (0..16).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
        assert_ne!(draw(7, 3), draw(8, 3));
        assert_eq!(StreamId::for_actor(ActorId(2), 1), StreamId(0x201));
    }

    #[test]
    fn csv_payload_flattening() {
        let e = ev(1.0, 1, "t").with("alpha", 2);
        assert_eq!(e.flat_payload(), "alpha=2;tag=t");
        assert_eq!(
            e.to_json_line(),
            r#"{"time":1.0,"actor_id":1,"kind":"fault","payload":{"alpha":"2","tag":"t"}}"#
        );
    }
}
