//! Internal read-side adapters behind `map`, `filter`, `zip` and `dup`.
//!
//! Mapped and filtered endpoints do not copy values through an intermediate
//! channel: they rewrite the registered waiter (its gate and consumer) and
//! pass it to the underlying source. That keeps gating compositional — a
//! selector's decision callback registered on `src.filter(p).map(f)` still
//! settles directly against the original channel, with `p` consulted under
//! the channel lock before the branch is claimed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, Weak};

use crate::channels::{
    ChanCore, ChannelKind, Consumer, Gate, In, ReadIn, ReadSource, ReadWaiter, ReadWaiterKind,
    WriteWaiter,
};
use crate::error::Failure;
use crate::runtime::Gopher;

/// Endpoint whose values are `f(upstream value)`.
///
/// `f` must be pure and cheap: when a downstream gate is present (a filter
/// or selector layered on top), `f` runs under the channel lock to translate
/// the gate, and may be evaluated more than once per value.
pub(crate) struct MappedSource<A, B> {
    pub(crate) inner: Arc<dyn ReadSource<A>>,
    pub(crate) f: Arc<dyn Fn(A) -> B + Send + Sync>,
}

fn map_read_in<A, B>(f: &Arc<dyn Fn(A) -> B + Send + Sync>, read_in: ReadIn<A>) -> ReadIn<B> {
    match read_in {
        ReadIn::Value(a) => match catch_unwind(AssertUnwindSafe(|| f(a))) {
            Ok(b) => ReadIn::Value(b),
            Err(p) => ReadIn::Failure(Failure::from_panic(p)),
        },
        ReadIn::Closed => ReadIn::Closed,
        ReadIn::Failure(e) => ReadIn::Failure(e),
    }
}

fn map_consumer<A, B>(
    f: Arc<dyn Fn(A) -> B + Send + Sync>,
    consumer: Consumer<B>,
) -> Consumer<A>
where
    A: Send + 'static,
    B: Send + 'static,
{
    Box::new(move |read_in| consumer(map_read_in(&f, read_in)))
}

impl<A, B> ReadSource<B> for MappedSource<A, B>
where
    A: Clone + Send + 'static,
    B: Clone + Send + 'static,
{
    fn register(&self, waiter: ReadWaiter<B>) {
        let gate = waiter.gate.map(|gb| {
            let f = self.f.clone();
            Arc::new(move |a: &A| {
                let a = a.clone();
                match catch_unwind(AssertUnwindSafe(|| f(a))) {
                    Ok(b) => gb(&b),
                    Err(p) => Err(Failure::from_panic(p)),
                }
            }) as Gate<A>
        });
        let kind = match waiter.kind {
            ReadWaiterKind::Committed { consumer } => ReadWaiterKind::Committed {
                consumer: map_consumer(self.f.clone(), consumer),
            },
            ReadWaiterKind::Deciding { decide } => {
                let f = self.f.clone();
                ReadWaiterKind::Deciding {
                    decide: Box::new(move || decide().map(|c| map_consumer(f, c))),
                }
            }
        };
        self.inner.register(ReadWaiter { alive: waiter.alive, gate, kind });
    }

    fn runtime(&self) -> Option<Gopher> {
        self.inner.runtime()
    }

    fn is_closed(&self) -> bool {
        self.inner.is_closed()
    }
}

/// Endpoint delivering only upstream values satisfying `p`; the rest are
/// consumed and dropped at the source.
pub(crate) struct FilteredSource<A> {
    pub(crate) inner: Arc<dyn ReadSource<A>>,
    pub(crate) p: Arc<dyn Fn(&A) -> bool + Send + Sync>,
}

impl<A: Clone + Send + 'static> ReadSource<A> for FilteredSource<A> {
    fn register(&self, waiter: ReadWaiter<A>) {
        let p = self.p.clone();
        let downstream = waiter.gate;
        let gate = Arc::new(move |a: &A| match catch_unwind(AssertUnwindSafe(|| p(a))) {
            Ok(true) => match &downstream {
                Some(g) => g(a),
                None => Ok(true),
            },
            Ok(false) => Ok(false),
            Err(panic) => Err(Failure::from_panic(panic)),
        }) as Gate<A>;
        self.inner.register(ReadWaiter { alive: waiter.alive, gate: Some(gate), kind: waiter.kind });
    }

    fn runtime(&self) -> Option<Gopher> {
        self.inner.runtime()
    }

    fn is_closed(&self) -> bool {
        self.inner.is_closed()
    }
}

/// An endpoint whose executor has gone away: every read reports shutdown.
pub(crate) fn orphaned_in<A: Clone + Send + 'static>() -> In<A> {
    let core = ChanCore::<A>::new(Weak::new(), ChannelKind::Growing);
    core.poison(Failure::Shutdown);
    In::from_source(core)
}

/// Endpoint of paired values pulled on demand from two sources.
///
/// Pairs travel through an internal rendezvous channel; the pump pulls one
/// value from each source only while a downstream reader is waiting, so zip
/// adds no hidden buffering beyond the pair in flight.
pub(crate) struct ZipSource<A: Clone + Send + 'static, B: Clone + Send + 'static> {
    chan: Arc<ChanCore<(A, B)>>,
    pump: Arc<ZipPump<A, B>>,
}

impl<A: Clone + Send + 'static, B: Clone + Send + 'static> ZipSource<A, B> {
    pub(crate) fn new(g: &Gopher, a: In<A>, b: In<B>) -> ZipSource<A, B> {
        let chan = ChanCore::new(Arc::downgrade(&g.inner), ChannelKind::Rendezvous);
        let pump =
            Arc::new(ZipPump { a, b, chan: chan.clone(), running: Mutex::new(false) });
        ZipSource { chan, pump }
    }
}

impl<A, B> ReadSource<(A, B)> for ZipSource<A, B>
where
    A: Clone + Send + 'static,
    B: Clone + Send + 'static,
{
    fn register(&self, waiter: ReadWaiter<(A, B)>) {
        self.chan.register_reader(waiter);
        self.pump.kick();
    }

    fn runtime(&self) -> Option<Gopher> {
        self.chan.runtime()
    }

    fn is_closed(&self) -> bool {
        self.chan.is_closed()
    }
}

struct ZipPump<A: Clone + Send + 'static, B: Clone + Send + 'static> {
    a: In<A>,
    b: In<B>,
    chan: Arc<ChanCore<(A, B)>>,
    /// True while a pull cycle (read a, read b, deliver pair) is in flight.
    running: Mutex<bool>,
}

impl<A, B> ZipPump<A, B>
where
    A: Clone + Send + 'static,
    B: Clone + Send + 'static,
{
    /// Starts a pull cycle if none is running and a reader is waiting.
    fn kick(self: &Arc<Self>) {
        {
            let mut running = self.running.lock().unwrap();
            if *running || self.chan.is_closed() || self.chan.queued_readers() == 0 {
                return;
            }
            *running = true;
        }
        self.cycle();
    }

    fn cycle(self: &Arc<Self>) {
        let this = self.clone();
        self.a.aread().on_complete(move |ra| match ra {
            Ok(av) => {
                let then = this.clone();
                this.b.aread().on_complete(move |rb| match rb {
                    Ok(bv) => then.deliver((av, bv)),
                    Err(e) => then.end(e),
                });
            }
            Err(e) => this.end(e),
        });
    }

    fn deliver(self: &Arc<Self>, pair: (A, B)) {
        let this = self.clone();
        self.chan.register_writer(WriteWaiter::ready(
            pair,
            Box::new(move |res| {
                if res.is_ok() {
                    *this.running.lock().unwrap() = false;
                    this.kick();
                }
                // Err means the zipped endpoint closed under us; the pump
                // stays parked and the pair is discarded.
            }),
        ));
    }

    /// One source ended: close the pair stream, discarding any unpaired
    /// value already pulled. Upstream failures poison it instead so readers
    /// observe the original failure.
    fn end(&self, e: Failure) {
        match e {
            Failure::EndOfInput => self.chan.close(),
            other => self.chan.poison(other),
        }
    }
}
