//! The channel settlement engine.
//!
//! A channel is a pair of FIFO waiter queues (readers, writers) plus a
//! buffer, guarded by one mutex. Every mutation (registering a waiter,
//! closing) runs a *settlement pass* under that mutex: matchable pairs are
//! matched, buffer slots are filled and drained, and every externally visible
//! consequence is captured as an *effect* closure. Effects (consumer
//! callbacks, write completions) run strictly after the mutex is released, in
//! the order they were produced — so user code never runs under the channel
//! lock, and for a rendezvous transfer the reader's receipt effect always
//! precedes the writer's completion effect.
//!
//! Three things *do* run under the lock, because they are decisions the
//! settlement algorithm depends on:
//!
//! * `alive` probes — cheap staleness checks used to lazily purge waiters
//!   whose selector round has already been won elsewhere;
//! * gates — value predicates installed by `filter`/`map` adapters;
//! * `decide` callbacks — the claim point of the callback protocol (for a
//!   selector branch this is an atomic claim of the round's arbiter, and for
//!   a write branch it also produces the value to write).
//!
//! All three must be fast and must not touch any channel.

use std::collections::VecDeque;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};

use crate::error::Failure;
use crate::runtime::Gopher;
use crate::runtime::RuntimeInner;

/// Buffering discipline of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    /// Capacity 0: a write completes only when a reader receives the value.
    Rendezvous,
    /// Bounded FIFO buffer: writes complete while the buffer has room.
    Buffered(NonZeroUsize),
    /// Unbounded FIFO buffer: writes always complete immediately.
    Growing,
    /// Accepts exactly one value, then closes. Reads do not consume the
    /// value: every reader (present and future) receives its own clone.
    OneShot,
}

/// What a reader receives.
#[derive(Debug)]
pub enum ReadIn<A> {
    /// The next value.
    Value(A),
    /// The channel is closed and drained: end of input.
    Closed,
    /// An upstream transform failed while producing the value.
    Failure(Failure),
}

/// One-round mutual-exclusion token shared by all registrations of a
/// selector round. The first claim wins; everything else observing the
/// claimed arbiter is stale.
#[derive(Default)]
pub(crate) struct Arbiter {
    claimed: AtomicBool,
}

impl Arbiter {
    pub(crate) fn new() -> Arc<Arbiter> {
        Arc::new(Arbiter::default())
    }

    pub(crate) fn try_claim(&self) -> bool {
        self.claimed
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    pub(crate) fn is_claimed(&self) -> bool {
        self.claimed.load(Ordering::SeqCst)
    }
}

/// Value predicate applied under the channel lock before a reader may claim
/// a value. `Ok(false)` means the reader consumes and discards the value
/// (filter semantics); `Err` means the predicate itself failed, which
/// consumes the value and fails the reader.
pub(crate) type Gate<A> = Arc<dyn Fn(&A) -> Result<bool, Failure> + Send + Sync>;

/// Staleness probe: `false` means the waiter can be dropped without effect.
pub(crate) type Alive = Arc<dyn Fn() -> bool + Send + Sync>;

pub(crate) type Consumer<A> = Box<dyn FnOnce(ReadIn<A>) + Send>;
pub(crate) type WriteDone = Box<dyn FnOnce(Result<(), Failure>) + Send>;

type Effect = Box<dyn FnOnce() + Send>;

pub(crate) struct ReadWaiter<A> {
    pub(crate) alive: Option<Alive>,
    pub(crate) gate: Option<Gate<A>>,
    pub(crate) kind: ReadWaiterKind<A>,
}

pub(crate) enum ReadWaiterKind<A> {
    /// Unconditionally accepts the next offer.
    Committed { consumer: Consumer<A> },
    /// Asked to decide at offer time (value-blind). `None` declines: the
    /// waiter is consumed and the value goes to the next reader.
    Deciding {
        #[allow(clippy::type_complexity)]
        decide: Box<dyn FnOnce() -> Option<Consumer<A>> + Send>,
    },
}

impl<A> ReadWaiter<A> {
    pub(crate) fn committed(consumer: Consumer<A>) -> ReadWaiter<A> {
        ReadWaiter { alive: None, gate: None, kind: ReadWaiterKind::Committed { consumer } }
    }

    fn is_alive(&self) -> bool {
        self.alive.as_ref().map_or(true, |p| p())
    }

    fn gate_check(&self, value: &A) -> Result<bool, Failure> {
        match &self.gate {
            Some(g) => g(value),
            None => Ok(true),
        }
    }

    /// Runs the waiter's decision, yielding the consumer if it accepts.
    fn decide(self) -> Option<Consumer<A>> {
        match self.kind {
            ReadWaiterKind::Committed { consumer } => Some(consumer),
            ReadWaiterKind::Deciding { decide } => decide(),
        }
    }
}

pub(crate) struct WriteWaiter<A> {
    pub(crate) alive: Option<Alive>,
    pub(crate) kind: WriteWaiterKind<A>,
}

pub(crate) enum WriteWaiterKind<A> {
    /// Value already produced; waiting for the channel to accept it.
    Ready { value: A, on_done: WriteDone },
    /// Asked to decide at transfer-opportunity time; on acceptance produces
    /// the value (claim-time production) and a completion callback.
    Deciding {
        #[allow(clippy::type_complexity)]
        decide: Box<dyn FnOnce() -> Option<(A, WriteDone)> + Send>,
        /// Invoked instead of a transfer when the channel closes first.
        on_closed: Box<dyn FnOnce() + Send>,
    },
}

impl<A> WriteWaiter<A> {
    pub(crate) fn ready(value: A, on_done: WriteDone) -> WriteWaiter<A> {
        WriteWaiter { alive: None, kind: WriteWaiterKind::Ready { value, on_done } }
    }

    fn is_alive(&self) -> bool {
        self.alive.as_ref().map_or(true, |p| p())
    }

    fn decide(self) -> Option<(A, WriteDone)> {
        match self.kind {
            WriteWaiterKind::Ready { value, on_done } => Some((value, on_done)),
            WriteWaiterKind::Deciding { decide, .. } => decide(),
        }
    }
}

struct ChanState<A> {
    buffer: VecDeque<A>,
    readers: VecDeque<ReadWaiter<A>>,
    writers: VecDeque<WriteWaiter<A>>,
    closed: bool,
    /// End-of-input is reported as this failure instead of `Closed` when
    /// set (used by derived endpoints to propagate upstream failures).
    poison: Option<Failure>,
}

pub(crate) struct ChanCore<A> {
    runtime: Weak<RuntimeInner>,
    kind: ChannelKind,
    state: Mutex<ChanState<A>>,
}

impl<A: Clone + Send + 'static> ChanCore<A> {
    pub(crate) fn new(runtime: Weak<RuntimeInner>, kind: ChannelKind) -> Arc<ChanCore<A>> {
        Arc::new(ChanCore {
            runtime,
            kind,
            state: Mutex::new(ChanState {
                buffer: VecDeque::new(),
                readers: VecDeque::new(),
                writers: VecDeque::new(),
                closed: false,
                poison: None,
            }),
        })
    }

    pub(crate) fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub(crate) fn runtime(&self) -> Option<Gopher> {
        self.runtime.upgrade().map(Gopher::from_inner)
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }

    /// Number of queued (possibly stale) readers; demand heuristic for
    /// derived endpoints that pump values lazily.
    pub(crate) fn queued_readers(&self) -> usize {
        self.state.lock().unwrap().readers.len()
    }

    pub(crate) fn register_reader(&self, w: ReadWaiter<A>) {
        self.mutate(|st| st.readers.push_back(w));
    }

    pub(crate) fn register_writer(&self, w: WriteWaiter<A>) {
        self.mutate(|st| st.writers.push_back(w));
    }

    /// Closes the channel. Buffered values stay readable; pending and future
    /// writes fail; drained readers observe end-of-input. Idempotent.
    pub(crate) fn close(&self) {
        self.mutate(|st| st.closed = true);
    }

    /// Closes the channel and makes drained readers observe `failure`
    /// instead of plain end-of-input.
    pub(crate) fn poison(&self, failure: Failure) {
        self.mutate(|st| {
            st.closed = true;
            if st.poison.is_none() {
                st.poison = Some(failure);
            }
        });
    }

    fn mutate(&self, f: impl FnOnce(&mut ChanState<A>)) {
        let mut effects: Vec<Effect> = Vec::new();
        {
            let mut st = self.state.lock().unwrap();
            f(&mut st);
            loop {
                let progressed = if st.closed {
                    settle_closed(&mut st, self.kind, &mut effects)
                } else {
                    match self.kind {
                        ChannelKind::Rendezvous => settle_rendezvous(&mut st, &mut effects),
                        ChannelKind::Buffered(k) => {
                            settle_buffered(&mut st, Some(k.get()), &mut effects)
                        }
                        ChannelKind::Growing => settle_buffered(&mut st, None, &mut effects),
                        ChannelKind::OneShot => settle_oneshot_open(&mut st, &mut effects),
                    }
                };
                if !progressed {
                    break;
                }
            }
        }
        for e in effects {
            e();
        }
    }
}

/// Pops dead waiters off the queue front; returns whether a live one remains.
fn front_live_reader<A>(q: &mut VecDeque<ReadWaiter<A>>) -> bool {
    while let Some(r) = q.front() {
        if r.is_alive() {
            return true;
        }
        q.pop_front();
    }
    false
}

fn front_live_writer<A>(q: &mut VecDeque<WriteWaiter<A>>) -> bool {
    while let Some(w) = q.front() {
        if w.is_alive() {
            return true;
        }
        q.pop_front();
    }
    false
}

/// One rendezvous matching step: transfers at most one value.
fn settle_rendezvous<A: Clone + Send + 'static>(
    st: &mut ChanState<A>,
    effects: &mut Vec<Effect>,
) -> bool {
    if !front_live_writer(&mut st.writers) || !front_live_reader(&mut st.readers) {
        return false;
    }
    // Commit the writer first: its decision produces the value that reader
    // gates must inspect.
    let writer = st.writers.pop_front().expect("live writer");
    let Some((value, on_done)) = writer.decide() else {
        return true; // declined: waiter consumed, try again next pass
    };

    // The write is committed; find a reader to receive the value.
    loop {
        if !front_live_reader(&mut st.readers) {
            // No reader after all (the candidate went stale concurrently):
            // park the produced value at the queue front so FIFO order and
            // the completion-at-transfer contract are preserved.
            st.writers.push_front(WriteWaiter::ready(value, on_done));
            return true;
        }
        let gate_result = st.readers.front().expect("live reader").gate_check(&value);
        match gate_result {
            Ok(false) => {
                // Front reader consumes and discards the value; the write
                // completed. The reader keeps waiting.
                effects.push(Box::new(move || on_done(Ok(()))));
                return true;
            }
            Err(f) => {
                // Predicate failure consumes the value and fails the reader.
                let reader = st.readers.pop_front().expect("live reader");
                if let Some(consumer) = reader.decide() {
                    effects.push(Box::new(move || consumer(ReadIn::Failure(f))));
                }
                effects.push(Box::new(move || on_done(Ok(()))));
                return true;
            }
            Ok(true) => {
                let reader = st.readers.pop_front().expect("live reader");
                match reader.decide() {
                    Some(consumer) => {
                        // Receipt strictly before write completion.
                        effects.push(Box::new(move || consumer(ReadIn::Value(value))));
                        effects.push(Box::new(move || on_done(Ok(()))));
                        return true;
                    }
                    None => continue, // declined: offer to the next reader
                }
            }
        }
    }
}

/// Buffer-mediated settlement: serve readers from the buffer, then admit
/// writers into free capacity. `cap = None` means unbounded.
fn settle_buffered<A: Clone + Send + 'static>(
    st: &mut ChanState<A>,
    cap: Option<usize>,
    effects: &mut Vec<Effect>,
) -> bool {
    let mut progressed = false;

    while !st.buffer.is_empty() && front_live_reader(&mut st.readers) {
        let value = st.buffer.front().expect("nonempty buffer");
        match st.readers.front().expect("live reader").gate_check(value) {
            Ok(false) => {
                st.buffer.pop_front();
                progressed = true;
            }
            Err(f) => {
                st.buffer.pop_front();
                let reader = st.readers.pop_front().expect("live reader");
                if let Some(consumer) = reader.decide() {
                    effects.push(Box::new(move || consumer(ReadIn::Failure(f))));
                }
                progressed = true;
            }
            Ok(true) => {
                let reader = st.readers.pop_front().expect("live reader");
                match reader.decide() {
                    Some(consumer) => {
                        let value = st.buffer.pop_front().expect("nonempty buffer");
                        effects.push(Box::new(move || consumer(ReadIn::Value(value))));
                        progressed = true;
                    }
                    None => progressed = true, // declined: value stays
                }
            }
        }
    }

    while cap.map_or(true, |k| st.buffer.len() < k) {
        if !front_live_writer(&mut st.writers) {
            break;
        }
        let writer = st.writers.pop_front().expect("live writer");
        match writer.decide() {
            Some((value, on_done)) => {
                st.buffer.push_back(value);
                effects.push(Box::new(move || on_done(Ok(()))));
            }
            None => {}
        }
        progressed = true;
    }

    progressed
}

/// Open one-shot settlement: admit the first write, which also closes the
/// channel (all reader service happens on the closed path).
fn settle_oneshot_open<A: Clone + Send + 'static>(
    st: &mut ChanState<A>,
    effects: &mut Vec<Effect>,
) -> bool {
    if !front_live_writer(&mut st.writers) {
        return false;
    }
    let writer = st.writers.pop_front().expect("live writer");
    match writer.decide() {
        Some((value, on_done)) => {
            st.buffer.push_back(value);
            st.closed = true;
            effects.push(Box::new(move || on_done(Ok(()))));
        }
        None => {}
    }
    true
}

/// Settlement once `closed` is set: fail every pending writer, serve readers
/// from what remains (buffer, or the one-shot value non-consumingly), then
/// report end-of-input.
fn settle_closed<A: Clone + Send + 'static>(
    st: &mut ChanState<A>,
    kind: ChannelKind,
    effects: &mut Vec<Effect>,
) -> bool {
    let mut progressed = false;

    while let Some(writer) = st.writers.pop_front() {
        progressed = true;
        if !writer.is_alive() {
            continue;
        }
        match writer.kind {
            WriteWaiterKind::Ready { on_done, .. } => {
                effects.push(Box::new(move || on_done(Err(Failure::Closed))));
            }
            WriteWaiterKind::Deciding { on_closed, .. } => {
                effects.push(Box::new(on_closed));
            }
        }
    }

    let one_shot = kind == ChannelKind::OneShot;
    loop {
        if !front_live_reader(&mut st.readers) {
            break;
        }
        progressed = true;
        if one_shot && !st.buffer.is_empty() {
            // Non-consuming promise read: each reader gets a clone.
            let value = st.buffer.front().expect("one-shot value").clone();
            let reader = st.readers.pop_front().expect("live reader");
            match reader.gate_check(&value) {
                Ok(true) => {
                    if let Some(consumer) = reader.decide() {
                        effects.push(Box::new(move || consumer(ReadIn::Value(value))));
                    }
                }
                Ok(false) => {
                    // The single value never matches this reader's gate and
                    // no further value can arrive: end of input.
                    if let Some(consumer) = reader.decide() {
                        effects.push(Box::new(move || consumer(ReadIn::Closed)));
                    }
                }
                Err(f) => {
                    if let Some(consumer) = reader.decide() {
                        effects.push(Box::new(move || consumer(ReadIn::Failure(f))));
                    }
                }
            }
        } else if !st.buffer.is_empty() {
            let value = st.buffer.front().expect("nonempty buffer");
            match st.readers.front().expect("live reader").gate_check(value) {
                Ok(false) => {
                    st.buffer.pop_front();
                }
                Err(f) => {
                    st.buffer.pop_front();
                    let reader = st.readers.pop_front().expect("live reader");
                    if let Some(consumer) = reader.decide() {
                        effects.push(Box::new(move || consumer(ReadIn::Failure(f))));
                    }
                }
                Ok(true) => {
                    let reader = st.readers.pop_front().expect("live reader");
                    if let Some(consumer) = reader.decide() {
                        let value = st.buffer.pop_front().expect("nonempty buffer");
                        effects.push(Box::new(move || consumer(ReadIn::Value(value))));
                    }
                }
            }
        } else {
            let reader = st.readers.pop_front().expect("live reader");
            let end = match &st.poison {
                Some(f) => ReadIn::Failure(f.clone()),
                None => ReadIn::Closed,
            };
            if let Some(consumer) = reader.decide() {
                effects.push(Box::new(move || consumer(end)));
            }
        }
    }

    progressed
}
