//! Timeline of the simulator: a min-heap of events ordered by virtual time,
//! then by kind, then by request id, then by insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Kinds in tie-break order: at equal times, earlier variants run first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    MigrationComplete,
    ExpertComplete { layer: usize, slot: usize },
    LayerComplete { layer: usize },
    RequestComplete,
    StatsTick,
    MigrationCheck,
    Arrival,
    LayerDispatch { layer: usize },
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::MigrationComplete => 0,
            EventKind::ExpertComplete { .. } => 1,
            EventKind::LayerComplete { .. } => 2,
            EventKind::RequestComplete => 3,
            EventKind::StatsTick => 4,
            EventKind::MigrationCheck => 5,
            EventKind::Arrival => 6,
            EventKind::LayerDispatch { .. } => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    /// Request the event belongs to; `usize::MAX` for system events.
    pub request: usize,
}

impl SimEvent {
    pub const SYSTEM: usize = usize::MAX;
}

#[derive(Debug)]
struct Entry {
    event: SimEvent,
    seq: u64,
}

impl Entry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.event
            .time
            .total_cmp(&other.event.time)
            .then(self.event.kind.rank().cmp(&other.event.kind.rank()))
            .then(self.event.request.cmp(&other.event.request))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    seq: u64,
    now: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedule an event. Panics if it lies in the past.
    pub fn push(&mut self, event: SimEvent) {
        assert!(
            event.time >= self.now,
            "event at {} scheduled before now {}",
            event.time,
            self.now
        );
        self.heap.push(Entry {
            event,
            seq: self.seq,
        });
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let e = self.heap.pop()?.event;
        self.now = e.time;
        Some(e)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
