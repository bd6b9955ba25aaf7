//! The callback registration protocol: continuation-passing reads and
//! writes, and the trampolined step type that chains them.
//!
//! `cbread`/`cbwrite` register a *decision* callback on an endpoint. The
//! decision runs at transfer-opportunity time (a value or buffer slot is
//! available) under the channel lock, so it must be quick, value-blind and
//! must not touch any channel. Declining (`None`) consumes the registration
//! and offers the opportunity to the next waiter. Accepting yields the
//! consumer (for reads) or the value plus follow-up (for writes), whose
//! resulting [`Continuated`] step is then driven by [`Gopher::step`].

use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::channels::core::{ReadIn, ReadWaiter, ReadWaiterKind, WriteWaiter, WriteWaiterKind};
use crate::channels::endpoint::{In, Out};
use crate::error::Failure;
use crate::runtime::{Eventual, FlowTermination, Gopher};

/// A read opportunity: the endpoint it arose on and the flow it belongs to.
pub struct ContRead<A: Clone + Send + 'static, B: Send + 'static> {
    pub source: In<A>,
    pub flow: FlowTermination<B>,
}

/// A write opportunity: the endpoint it arose on and the flow it belongs to.
pub struct ContWrite<A: Clone + Send + 'static, B: Send + 'static> {
    pub sink: Out<A>,
    pub flow: FlowTermination<B>,
}

/// Consumer returned by an accepting read decision: receives the value (or
/// end-of-input / failure) and yields the next step of the flow.
pub type ReadConsumer<A, B> = Box<dyn FnOnce(ReadIn<A>) -> Eventual<Continuated<B>> + Send>;

/// One reified step of a suspended flow.
pub enum Continuated<B: Send + 'static> {
    /// The flow finished: complete its termination with this value.
    Done(B),
    /// Suspend until a value can be read.
    PendingRead(PendingRead<B>),
    /// Suspend until a value can be written.
    PendingWrite(PendingWrite<B>),
    /// Yield the worker and continue with the produced step.
    Skip(Skip<B>),
    /// Park forever: the flow is not continued by this chain.
    Never,
}

/// A deferred `cbread` registration, erased over the element type.
pub struct PendingRead<B: Send + 'static> {
    register: Box<dyn FnOnce() + Send>,
    _marker: std::marker::PhantomData<fn() -> B>,
}

impl<B: Send + 'static> PendingRead<B> {
    pub fn new<A, F>(source: In<A>, f: F, ft: FlowTermination<B>) -> PendingRead<B>
    where
        A: Clone + Send + 'static,
        F: FnOnce(&ContRead<A, B>) -> Option<ReadConsumer<A, B>> + Send + 'static,
    {
        PendingRead {
            register: Box::new(move || source.cbread(f, ft)),
            _marker: std::marker::PhantomData,
        }
    }
}

/// A deferred `cbwrite` registration, erased over the element type.
pub struct PendingWrite<B: Send + 'static> {
    register: Box<dyn FnOnce() + Send>,
    _marker: std::marker::PhantomData<fn() -> B>,
}

impl<B: Send + 'static> PendingWrite<B> {
    pub fn new<A, F>(sink: Out<A>, f: F, ft: FlowTermination<B>) -> PendingWrite<B>
    where
        A: Clone + Send + 'static,
        F: FnOnce(&ContWrite<A, B>) -> Option<(A, Eventual<Continuated<B>>)> + Send + 'static,
    {
        PendingWrite {
            register: Box::new(move || sink.cbwrite(f, ft)),
            _marker: std::marker::PhantomData,
        }
    }
}

/// A cooperative yield: re-scheduled through the run queue before producing
/// the next step.
pub struct Skip<B: Send + 'static> {
    next: Box<dyn FnOnce() -> Continuated<B> + Send>,
}

impl<B: Send + 'static> Skip<B> {
    pub fn new(next: impl FnOnce() -> Continuated<B> + Send + 'static) -> Skip<B> {
        Skip { next: Box::new(next) }
    }
}

impl Gopher {
    /// Drives one step of a continuation chain against `ft`.
    pub fn step<B: Send + 'static>(&self, cont: Continuated<B>, ft: &FlowTermination<B>) {
        match cont {
            Continuated::Done(value) => ft.complete(value),
            Continuated::PendingRead(p) => (p.register)(),
            Continuated::PendingWrite(p) => (p.register)(),
            Continuated::Skip(s) => {
                let g = self.clone();
                let job_ft = ft.clone();
                let job = Box::new(move || {
                    match catch_unwind(AssertUnwindSafe(s.next)) {
                        Ok(next) => g.step(next, &job_ft),
                        Err(p) => job_ft.fail(Failure::from_panic(p)),
                    }
                });
                if self.inner.schedule(job).is_err() {
                    ft.fail(Failure::Shutdown);
                }
            }
            Continuated::Never => {}
        }
    }
}

impl<A: Clone + Send + 'static> In<A> {
    /// Registers a continuation-passing read. `f` decides at
    /// value-available time whether to accept the opportunity; it runs under
    /// the channel lock and must be quick and channel-free. On acceptance,
    /// the returned consumer receives the value outside the lock; its
    /// resulting step is driven against `ft`, and any consumer failure fails
    /// `ft`.
    pub fn cbread<B, F>(&self, f: F, ft: FlowTermination<B>)
    where
        B: Send + 'static,
        F: FnOnce(&ContRead<A, B>) -> Option<ReadConsumer<A, B>> + Send + 'static,
    {
        let cont = ContRead { source: self.clone(), flow: ft.clone() };
        let runtime = self.runtime();
        self.register(ReadWaiter {
            alive: None,
            gate: None,
            kind: ReadWaiterKind::Deciding {
                decide: Box::new(move || {
                    f(&cont).map(|consumer| -> Box<dyn FnOnce(ReadIn<A>) + Send> {
                        let ft = cont.flow;
                        Box::new(move |read_in| {
                            drive_consumer(runtime, consumer, read_in, ft)
                        })
                    })
                }),
            },
        });
    }
}

impl<A: Clone + Send + 'static> Out<A> {
    /// Registers a continuation-passing write. `f` decides at
    /// slot-available time; on acceptance it produces the value to transfer
    /// (claim-time production) and the follow-up step. If the channel closes
    /// before a transfer, `ft` fails with [`Failure::Closed`].
    pub fn cbwrite<B, F>(&self, f: F, ft: FlowTermination<B>)
    where
        B: Send + 'static,
        F: FnOnce(&ContWrite<A, B>) -> Option<(A, Eventual<Continuated<B>>)> + Send + 'static,
    {
        let cont = ContWrite { sink: self.clone(), flow: ft.clone() };
        let runtime = self.runtime();
        let close_ft = ft.clone();
        self.register(WriteWaiter {
            alive: None,
            kind: WriteWaiterKind::Deciding {
                decide: Box::new(move || {
                    f(&cont).map(|(value, next)| {
                        let ft = cont.flow;
                        let done: Box<dyn FnOnce(Result<(), Failure>) + Send> =
                            Box::new(move |res| match res {
                                Ok(()) => drive_next(runtime, next, ft),
                                Err(e) => ft.fail(e),
                            });
                        (value, done)
                    })
                }),
                on_closed: Box::new(move || close_ft.fail(Failure::Closed)),
            },
        });
    }
}

/// Runs a read consumer outside the lock and chains its resulting step.
fn drive_consumer<A, B>(
    runtime: Option<Gopher>,
    consumer: ReadConsumer<A, B>,
    read_in: ReadIn<A>,
    ft: FlowTermination<B>,
) where
    A: Clone + Send + 'static,
    B: Send + 'static,
{
    match catch_unwind(AssertUnwindSafe(move || consumer(read_in))) {
        Ok(next) => drive_next(runtime, next, ft),
        Err(p) => ft.fail(Failure::from_panic(p)),
    }
}

fn drive_next<B: Send + 'static>(
    runtime: Option<Gopher>,
    next: Eventual<Continuated<B>>,
    ft: FlowTermination<B>,
) {
    match runtime {
        Some(g) => next.on_complete(move |res| match res {
            Ok(cont) => g.step(cont, &ft),
            Err(e) => ft.fail(e),
        }),
        None => ft.fail(Failure::Shutdown),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[test]
    fn cbread_accept_consumes_buffered_value() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        ch.awrite(5);
        let (ft, evt) = FlowTermination::new();
        ch.input().cbread(
            |_cont| {
                Some(Box::new(|read_in| match read_in {
                    ReadIn::Value(v) => Eventual::ready(Continuated::Done(v * 10)),
                    other => panic!("unexpected {other:?}"),
                }) as ReadConsumer<i32, i32>)
            },
            ft,
        );
        assert_eq!(evt.try_take(), Some(Ok(50)));
        assert!(!ch.aread().is_completed()); // buffer drained
    }

    #[test]
    fn cbread_decline_offers_to_next_reader() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        let (ft, declined_evt) = FlowTermination::<i32>::new();
        ch.input().cbread(|_| None, ft);
        let next = ch.aread();
        ch.awrite(7);
        assert_eq!(next.try_take(), Some(Ok(7)));
        assert!(!declined_evt.is_completed()); // declining left the flow alone
    }

    #[test]
    fn cbread_sees_closed_after_drain() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        ch.close();
        let (ft, evt) = FlowTermination::new();
        ch.input().cbread(
            |_cont| {
                Some(Box::new(|read_in| {
                    Eventual::ready(Continuated::Done(matches!(read_in, ReadIn::Closed)))
                }) as ReadConsumer<i32, bool>)
            },
            ft,
        );
        assert_eq!(evt.try_take(), Some(Ok(true)));
    }

    #[test]
    fn cbwrite_transfers_to_waiting_reader() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        let r = ch.aread();
        let (ft, evt) = FlowTermination::new();
        ch.output().cbwrite(
            |_cont| Some((9, Eventual::ready(Continuated::Done("written")))),
            ft,
        );
        assert_eq!(r.try_take(), Some(Ok(9)));
        assert_eq!(evt.try_take(), Some(Ok("written")));
    }

    #[test]
    fn cbwrite_into_free_buffer_slot() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        let (ft, evt) = FlowTermination::new();
        ch.output().cbwrite(|_| Some((4, Eventual::ready(Continuated::Done(())))), ft);
        assert_eq!(evt.try_take(), Some(Ok(())));
        assert_eq!(ch.aread().try_take(), Some(Ok(4)));
    }

    #[test]
    fn cbwrite_on_closed_channel_fails_flow() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        ch.close();
        let (ft, evt) = FlowTermination::<()>::new();
        ch.output().cbwrite(|_| Some((1, Eventual::ready(Continuated::Done(())))), ft);
        assert_eq!(evt.try_take(), Some(Err(Failure::Closed)));
    }

    #[test]
    fn continuation_chain_reads_three_values() {
        // A flow that reads values until it has three, summing them —
        // expressed purely as chained PendingRead steps.
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(3);
        for v in [1, 2, 3] {
            ch.awrite(v);
        }
        let (ft, evt) = FlowTermination::new();
        let input = ch.input();
        let flow_ft = ft.clone();
        fn step_with(
            g: Gopher,
            input: In<i32>,
            ft: FlowTermination<i32>,
            acc: i32,
            remaining: usize,
        ) {
            let g2 = g.clone();
            let input2 = input.clone();
            let ft_for_consumer = ft.clone();
            input.cbread(
                move |_c| {
                    Some(Box::new(move |read_in: ReadIn<i32>| {
                        let v = match read_in {
                            ReadIn::Value(v) => v,
                            other => panic!("unexpected {other:?}"),
                        };
                        let total = acc + v;
                        if remaining == 1 {
                            Eventual::ready(Continuated::Done(total))
                        } else {
                            step_with(g2, input2, ft_for_consumer, total, remaining - 1);
                            Eventual::ready(Continuated::Never)
                        }
                    }) as ReadConsumer<i32, i32>)
                },
                ft.clone(),
            );
        }
        step_with(g.clone(), input, flow_ft, 0, 3);
        assert_eq!(evt.try_take(), Some(Ok(6)));
    }

    #[test]
    fn skip_step_reschedules_through_run_queue() {
        let g = Gopher::deterministic();
        let (ft, evt) = FlowTermination::new();
        let order = Arc::new(Mutex::new(Vec::new()));
        let o = order.clone();
        g.step(
            Continuated::Skip(Skip::new(move || {
                o.lock().unwrap().push("skip body");
                Continuated::Done(11)
            })),
            &ft,
        );
        order.lock().unwrap().push("after step call");
        assert!(!evt.is_completed()); // deferred, not inline
        g.run_until_idle().unwrap();
        assert_eq!(evt.try_take(), Some(Ok(11)));
        assert_eq!(*order.lock().unwrap(), vec!["after step call", "skip body"]);
    }

    #[test]
    fn consumer_panic_fails_flow() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        ch.awrite(1);
        let (ft, evt) = FlowTermination::<()>::new();
        ch.input().cbread(
            |_c| {
                Some(Box::new(|_: ReadIn<i32>| -> Eventual<Continuated<()>> {
                    panic!("consumer exploded")
                }) as ReadConsumer<i32, ()>)
            },
            ft,
        );
        match evt.try_take() {
            Some(Err(Failure::Panicked(msg))) => assert!(msg.contains("consumer exploded")),
            other => panic!("expected panic failure, got {other:?}"),
        }
    }

    #[test]
    fn failed_next_step_fails_flow() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        ch.awrite(1);
        let (ft, evt) = FlowTermination::<()>::new();
        ch.input().cbread(
            |_c| {
                Some(Box::new(|_| Eventual::failed(Failure::msg("downstream refused")))
                    as ReadConsumer<i32, ()>)
            },
            ft,
        );
        assert_eq!(evt.try_take(), Some(Err(Failure::msg("downstream refused"))));
    }

    #[test]
    fn pending_write_chain_emits_counter_values() {
        // A generator flow: write 0..3 into a channel through chained
        // PendingWrite steps, then finish.
        let g = Gopher::deterministic();
        let ch = g.growing::<usize>();
        let (ft, evt) = FlowTermination::new();

        fn drive(g: &Gopher, sink: Out<usize>, ft: &FlowTermination<usize>, n: usize, limit: usize) {
            if n == limit {
                ft.complete(n);
                return;
            }
            let g2 = g.clone();
            let s2 = sink.clone();
            let ft2 = ft.clone();
            sink.cbwrite(
                move |_cw| {
                    Some((
                        n,
                        Eventual::ready(Continuated::Skip(Skip::new(move || {
                            drive(&g2, s2, &ft2, n + 1, limit);
                            Continuated::Never
                        }))),
                    ))
                },
                ft.clone(),
            );
        }
        drive(&g, ch.output(), &ft, 0, 4);
        g.run_until_idle().unwrap();
        assert_eq!(evt.try_take(), Some(Ok(4)));
        for i in 0..4 {
            assert_eq!(ch.aread().try_take(), Some(Ok(i)));
        }
    }
}
