//! Real and virtual clocks plus the timer queue shared by both.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::{Duration, Instant};

pub(crate) enum Clock {
    Real(Instant),
    /// Nanoseconds since runtime start, moved only by `advance_virtual_time`.
    Virtual(AtomicU64),
}

impl Clock {
    pub(crate) fn real() -> Clock {
        Clock::Real(Instant::now())
    }

    pub(crate) fn virtual_() -> Clock {
        Clock::Virtual(AtomicU64::new(0))
    }

    pub(crate) fn now(&self) -> Duration {
        match self {
            Clock::Real(start) => start.elapsed(),
            Clock::Virtual(nanos) => Duration::from_nanos(nanos.load(AtomicOrdering::SeqCst)),
        }
    }

    /// Moves a virtual clock forward to `to`. Never moves backwards.
    pub(crate) fn set_virtual(&self, to: Duration) {
        match self {
            Clock::Virtual(nanos) => {
                let target = to.as_nanos() as u64;
                nanos.fetch_max(target, AtomicOrdering::SeqCst);
            }
            Clock::Real(_) => unreachable!("set_virtual on a real clock"),
        }
    }

    pub(crate) fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }
}

pub(crate) struct TimerEntry {
    pub deadline: Duration,
    seq: u64,
    pub action: Box<dyn FnOnce() + Send>,
}

impl PartialEq for TimerEntry {
    fn eq(&self, other: &Self) -> bool {
        self.deadline == other.deadline && self.seq == other.seq
    }
}
impl Eq for TimerEntry {}
impl PartialOrd for TimerEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TimerEntry {
    /// Reversed so the binary heap pops the earliest deadline first;
    /// ties resolve in registration order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .deadline
            .cmp(&self.deadline)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
pub(crate) struct TimerQueue {
    heap: BinaryHeap<TimerEntry>,
    next_seq: u64,
}

impl TimerQueue {
    pub(crate) fn push(&mut self, deadline: Duration, action: Box<dyn FnOnce() + Send>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(TimerEntry { deadline, seq, action });
    }

    pub(crate) fn next_deadline(&self) -> Option<Duration> {
        self.heap.peek().map(|e| e.deadline)
    }

    /// Pops the earliest timer if its deadline is at or before `now`.
    pub(crate) fn pop_due(&mut self, now: Duration) -> Option<TimerEntry> {
        if self.heap.peek().is_some_and(|e| e.deadline <= now) {
            self.heap.pop()
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timers_pop_in_deadline_then_registration_order() {
        let mut q = TimerQueue::default();
        q.push(Duration::from_millis(20), Box::new(|| {}));
        q.push(Duration::from_millis(10), Box::new(|| {}));
        q.push(Duration::from_millis(10), Box::new(|| {}));

        let first = q.pop_due(Duration::from_millis(30)).unwrap();
        let second = q.pop_due(Duration::from_millis(30)).unwrap();
        let third = q.pop_due(Duration::from_millis(30)).unwrap();
        assert_eq!(first.deadline, Duration::from_millis(10));
        assert_eq!(second.deadline, Duration::from_millis(10));
        assert!(first.seq < second.seq, "ties must preserve registration order");
        assert_eq!(third.deadline, Duration::from_millis(20));
        assert!(q.pop_due(Duration::from_millis(30)).is_none());
    }

    #[test]
    fn pop_due_respects_now() {
        let mut q = TimerQueue::default();
        q.push(Duration::from_millis(10), Box::new(|| {}));
        assert!(q.pop_due(Duration::from_millis(9)).is_none());
        assert!(q.pop_due(Duration::from_millis(10)).is_some());
    }

    #[test]
    fn virtual_clock_advances_monotonically() {
        let c = Clock::virtual_();
        assert_eq!(c.now(), Duration::ZERO);
        c.set_virtual(Duration::from_millis(5));
        c.set_virtual(Duration::from_millis(3));
        assert_eq!(c.now(), Duration::from_millis(5));
    }
}
