//! Deterministic discrete-event engine.
//!
//! Events are dispatched in `(time, seq)` order where `seq` is a global
//! insertion counter, so events scheduled for the same instant run FIFO.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::time::{SimTime, TimeOverflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    FrameArrival,
    PeriodicTimer,
    AppPoll,
    DelayedAckTimer,
    ScenarioAction,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub kind: EventKind,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event scheduled at {at} but simulation time is already {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error(transparent)]
    Overflow(#[from] TimeOverflow),
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // Reversed so that BinaryHeap (a max-heap) pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    dispatched: u64,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Engine::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Engine<P> {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Total events dispatched since construction.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Queues an event; returns its sequence number.
    pub fn schedule(
        &mut self,
        time: SimTime,
        target: NodeId,
        kind: EventKind,
        payload: P,
    ) -> Result<u64, SimError> {
        if time < self.now {
            return Err(SimError::SchedulingInPast { at: time, now: self.now });
        }
        // Validates the 2^62 cap.
        time.checked_add(SimTime::ZERO)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { time, seq, target, kind, payload }));
        Ok(seq)
    }

    /// Schedules `delay` after the current time.
    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        target: NodeId,
        kind: EventKind,
        payload: P,
    ) -> Result<u64, SimError> {
        let at = self.now.checked_add(delay)?;
        self.schedule(at, target, kind, payload)
    }

    /// Dispatches every event with `time <= until`, including events that
    /// handlers schedule along the way, then advances the clock to `until`.
    /// Returns the number of events dispatched by this call.
    pub fn run_until<F>(&mut self, until: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Engine<P>, Event<P>),
    {
        let mut count = 0;
        while let Some(top) = self.queue.peek() {
            if top.0.time > until {
                break;
            }
            let Queued(ev) = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.dispatched += 1;
            count += 1;
            handler(self, ev);
        }
        if until > self.now {
            self.now = until;
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(engine: &mut Engine<&'static str>, until: u64) -> Vec<(u64, &'static str)> {
        let mut seen = Vec::new();
        engine.run_until(SimTime::from_micros(until), |e, ev| seen.push((e.now().as_micros(), ev.payload)));
        seen
    }

    #[test]
    fn equal_times_dispatch_fifo() {
        let mut e = Engine::new();
        e.schedule(SimTime::from_micros(100), NodeId(0), EventKind::AppPoll, "A").unwrap();
        e.schedule(SimTime::from_micros(100), NodeId(0), EventKind::AppPoll, "B").unwrap();
        assert_eq!(drain(&mut e, 1000), vec![(100, "A"), (100, "B")]);
    }

    #[test]
    fn earlier_time_first() {
        let mut e = Engine::new();
        e.schedule(SimTime::from_micros(50), NodeId(0), EventKind::AppPoll, "late").unwrap();
        e.schedule(SimTime::from_micros(40), NodeId(0), EventKind::AppPoll, "early").unwrap();
        assert_eq!(drain(&mut e, 100), vec![(40, "early"), (50, "late")]);
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut e: Engine<()> = Engine::new();
        e.run_until(SimTime::from_micros(20), |_, _| {});
        assert_eq!(
            e.schedule(SimTime::from_micros(10), NodeId(0), EventKind::AppPoll, ()),
            Err(SimError::SchedulingInPast {
                at: SimTime::from_micros(10),
                now: SimTime::from_micros(20)
            })
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut e: Engine<()> = Engine::new();
        assert_eq!(e.run_until(SimTime::from_micros(1000), |_, _| {}), 0);
        assert_eq!(e.now(), SimTime::from_micros(1000));
    }

    #[test]
    fn later_events_stay_queued() {
        let mut e = Engine::new();
        for (t, p) in [(1, "a"), (2, "b"), (3, "c"), (9, "d")] {
            e.schedule(SimTime::from_micros(t), NodeId(0), EventKind::AppPoll, p).unwrap();
        }
        assert_eq!(e.run_until(SimTime::from_micros(5), |_, _| {}), 3);
        assert_eq!(e.pending(), 1);
        assert_eq!(e.now(), SimTime::from_micros(5));
    }

    #[test]
    fn handler_chain_within_horizon() {
        // t=10 handler schedules t=15, whose handler schedules t=30 (beyond 20).
        let mut e = Engine::new();
        e.schedule(SimTime::from_micros(10), NodeId(0), EventKind::ScenarioAction, 1u32).unwrap();
        let mut log = Vec::new();
        let n = e.run_until(SimTime::from_micros(20), |eng, ev| {
            log.push((eng.now().as_micros(), ev.payload));
            let next = eng.now().as_micros() + if ev.payload == 1 { 5 } else { 15 };
            eng.schedule(SimTime::from_micros(next), NodeId(0), EventKind::ScenarioAction, ev.payload + 1)
                .unwrap();
        });
        assert_eq!(n, 2);
        assert_eq!(log, vec![(10, 1), (15, 2)]);
        assert_eq!(e.pending(), 1);
    }

    #[test]
    fn overflow_is_rejected() {
        let mut e: Engine<()> = Engine::new();
        assert!(matches!(
            e.schedule(SimTime::from_micros(u64::MAX), NodeId(0), EventKind::AppPoll, ()),
            Err(SimError::Overflow(_))
        ));
    }
}
