//! Deterministic discrete-event engine: virtual clock, `(time, seq)`-ordered
//! queue, keyed random substreams and the metrics ledger.
//!
//! The loop is single-threaded. Handlers receive `&mut Simulator` so they can
//! schedule follow-up events and charge the ledger while an event is processed.

mod ledger;
mod rng;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

pub use ledger::{
    EnergyKind, MetricsLedger, DEADLINE_MISSES, FRAMES_RENDERED, MOTION_TO_PHOTON_TOTAL,
    TRACKING_RECOVERY_EVENTS, TRACKING_RECOVERY_TOTAL,
};
pub use rng::RngStreams;

/// Virtual time in microseconds.
pub type Time = u64;

pub const US_PER_SECOND: Time = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {at} us but clock is already at {now} us")]
    PastEvent { at: Time, now: Time },
    #[error("run_until target {target} us is before the clock ({now} us)")]
    PastHorizon { target: Time, now: Time },
    #[error("negative or non-finite energy charge {amount_mj} mJ for module {module}")]
    NegativeEnergy { module: String, amount_mj: f64 },
    #[error("series {series} sample at {at} us precedes last sample at {last} us")]
    SeriesOrder { series: String, at: Time, last: Time },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    SensorFrame,
    FrameTick,
    TaskSubmit,
    TaskDone,
    PacketArrival,
    ServerExecDone,
    UserMoved,
    UserInput,
    AppSwitch,
    PolicyChanged,
    HandoverTriggered,
    SyncTick,
}

/// Runtime change to the privacy/context state.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyChange {
    Context(String),
    BystanderEnter(u32),
    BystanderLeave(u32),
    /// Debug hook: pushes a Bystander-tagged element past the input filter.
    InjectTaint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SensorFrame { frame: u64 },
    FrameTick { frame: u64 },
    TaskSubmit { spec: usize, instance: u64 },
    TaskDone { task: u64, generation: u32 },
    PacketArrival { task: u64, generation: u32 },
    ServerExecDone { task: u64, generation: u32 },
    UserMoved { sample: usize },
    UserInput { index: usize },
    AppSwitch { index: usize },
    PolicyChanged(PolicyChange),
    HandoverTriggered { cell: String },
    SyncTick { round: u64 },
}

impl Payload {
    pub fn kind(&self) -> EventKind {
        match self {
            Payload::SensorFrame { .. } => EventKind::SensorFrame,
            Payload::FrameTick { .. } => EventKind::FrameTick,
            Payload::TaskSubmit { .. } => EventKind::TaskSubmit,
            Payload::TaskDone { .. } => EventKind::TaskDone,
            Payload::PacketArrival { .. } => EventKind::PacketArrival,
            Payload::ServerExecDone { .. } => EventKind::ServerExecDone,
            Payload::UserMoved { .. } => EventKind::UserMoved,
            Payload::UserInput { .. } => EventKind::UserInput,
            Payload::AppSwitch { .. } => EventKind::AppSwitch,
            Payload::PolicyChanged(_) => EventKind::PolicyChanged,
            Payload::HandoverTriggered { .. } => EventKind::HandoverTriggered,
            Payload::SyncTick { .. } => EventKind::SyncTick,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: Time,
    pub seq: u64,
    pub payload: Payload,
}

impl SimEvent {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

// Min-heap adapter over (time, seq).
#[derive(Debug)]
struct Queued(SimEvent);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.0.time, self.0.seq) == (other.0.time, other.0.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

/// One processed event as recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: Time,
    pub seq: u64,
    pub kind: EventKind,
}

pub trait EventHandler {
    type Error: From<SimError>;

    fn handle(&mut self, sim: &mut Simulator, event: SimEvent) -> Result<(), Self::Error>;
}

#[derive(Debug)]
pub struct Simulator {
    now: Time,
    next_seq: u64,
    queue: BinaryHeap<Queued>,
    enqueued: u64,
    processed: u64,
    trace: Vec<TraceEntry>,
    keep_trace: bool,
    pub ledger: MetricsLedger,
    pub rng: RngStreams,
}

impl Simulator {
    pub fn new(seed: u64) -> Self {
        Simulator {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            enqueued: 0,
            processed: 0,
            trace: Vec::new(),
            keep_trace: false,
            ledger: MetricsLedger::new(),
            rng: RngStreams::new(seed),
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.keep_trace = true;
        self
    }

    pub fn now(&self) -> Time {
        self.now
    }

    /// Enqueues `payload` at `time`, assigning the next sequence number.
    pub fn schedule(&mut self, time: Time, payload: Payload) -> Result<u64, SimError> {
        if time < self.now {
            return Err(SimError::PastEvent { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.enqueued += 1;
        self.queue.push(Queued(SimEvent { time, seq, payload }));
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: Time, payload: Payload) -> Result<u64, SimError> {
        self.schedule(self.now + delay, payload)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Pops the next event with `time ≤ t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: Time) -> Option<SimEvent> {
        match self.queue.peek() {
            Some(q) if q.0.time <= t_end => {}
            _ => return None,
        }
        let ev = self.queue.pop()?.0;
        self.now = ev.time;
        self.processed += 1;
        if self.keep_trace {
            self.trace.push(TraceEntry { time: ev.time, seq: ev.seq, kind: ev.kind() });
        }
        Some(ev)
    }

    /// Processes every event up to and including `t_end` in `(time, seq)` order,
    /// then parks the clock at `t_end`.
    pub fn run_until<H: EventHandler>(&mut self, t_end: Time, handler: &mut H) -> Result<&MetricsLedger, H::Error> {
        if t_end < self.now {
            return Err(SimError::PastHorizon { target: t_end, now: self.now }.into());
        }
        while let Some(ev) = self.pop_until(t_end) {
            handler.handle(self, ev)?;
        }
        self.now = t_end;
        Ok(&self.ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder(Vec<(Time, u64)>);

    impl EventHandler for Recorder {
        type Error = SimError;
        fn handle(&mut self, sim: &mut Simulator, ev: SimEvent) -> Result<(), SimError> {
            self.0.push((ev.time, ev.seq));
            if let Payload::FrameTick { frame } = ev.payload {
                sim.ledger.incr(FRAMES_RENDERED, 1);
                sim.schedule_in(16_667, Payload::FrameTick { frame: frame + 1 })?;
            }
            Ok(())
        }
    }

    fn marker(i: u64) -> Payload {
        Payload::SyncTick { round: i }
    }

    #[test]
    fn time_ordering() {
        let mut sim = Simulator::new(1);
        sim.schedule(5, marker(0)).unwrap();
        sim.schedule(3, marker(1)).unwrap();
        let a = sim.pop_until(10).unwrap();
        let b = sim.pop_until(10).unwrap();
        assert_eq!((a.time, b.time), (3, 5));
    }

    #[test]
    fn seq_tiebreak() {
        let mut sim = Simulator::new(1);
        let s1 = sim.schedule(5, marker(0)).unwrap();
        let s2 = sim.schedule(5, marker(1)).unwrap();
        assert!(s1 < s2);
        assert_eq!(sim.pop_until(5).unwrap().seq, s1);
        assert_eq!(sim.pop_until(5).unwrap().seq, s2);
    }

    #[test]
    fn past_event_rejected() {
        let mut sim = Simulator::new(1);
        sim.schedule(2, marker(0)).unwrap();
        sim.pop_until(2).unwrap();
        assert_eq!(sim.schedule(1, marker(1)), Err(SimError::PastEvent { at: 1, now: 2 }));
    }

    #[test]
    fn vacuous_run_parks_clock() {
        let mut sim = Simulator::new(1);
        let mut h = Recorder(vec![]);
        let ledger = sim.run_until(10, &mut h).unwrap().clone();
        assert_eq!(sim.now(), 10);
        assert!(ledger.counters().is_empty());
        assert!(matches!(sim.run_until(5, &mut h), Err(SimError::PastHorizon { .. })));
    }

    #[test]
    fn sixty_ticks_per_second_with_phase_zero() {
        let mut sim = Simulator::new(1).with_trace();
        sim.schedule(0, Payload::FrameTick { frame: 0 }).unwrap();
        let mut h = Recorder(vec![]);
        sim.run_until(US_PER_SECOND, &mut h).unwrap();
        assert_eq!(sim.ledger.counter(FRAMES_RENDERED), 60);
        // conservation: the 61st tick is still queued
        assert_eq!(sim.enqueued(), sim.processed() + sim.pending() as u64);
        let t = sim.trace();
        assert!(t.windows(2).all(|w| (w[0].time, w[0].seq) < (w[1].time, w[1].seq)));
    }
}
