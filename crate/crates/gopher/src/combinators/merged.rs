//! Merged outputs: one writable endpoint fanning each write into whichever
//! of two constituents accepts it first.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::channels::{Arbiter, Out, WriteDone, WriteSink, WriteWaiter, WriteWaiterKind};
use crate::error::Failure;
use crate::runtime::{Eventual, Gopher};

type Claim<A> = Box<dyn FnOnce() -> Option<(A, WriteDone)> + Send>;

/// Two writable endpoints merged into one.
///
/// Each write registers on both constituents and settles against whichever
/// can accept first; when both are ready simultaneously the winner
/// alternates. A write fails with [`Failure::Closed`] only once *both*
/// constituents are closed. The original endpoints can be recovered with
/// [`MergedOutput::into_parts`] (they are the same endpoints, not copies).
pub struct MergedOutput<A: Clone + Send + 'static> {
    sink: Arc<MergedSink<A>>,
}

impl<A: Clone + Send + 'static> Clone for MergedOutput<A> {
    fn clone(&self) -> Self {
        MergedOutput { sink: self.sink.clone() }
    }
}

impl<A: Clone + Send + 'static> MergedOutput<A> {
    pub fn new(first: Out<A>, second: Out<A>) -> MergedOutput<A> {
        MergedOutput {
            sink: Arc::new(MergedSink { first, second, flip: AtomicBool::new(false) }),
        }
    }

    /// The merged writable endpoint; behaves like any other `Out`.
    pub fn output(&self) -> Out<A> {
        Out::from_sink(self.sink.clone())
    }

    /// First constituent (the original endpoint).
    pub fn first(&self) -> Out<A> {
        self.sink.first.clone()
    }

    /// Second constituent (the original endpoint).
    pub fn second(&self) -> Out<A> {
        self.sink.second.clone()
    }

    /// Deconstructs back into the original endpoints.
    pub fn into_parts(self) -> (Out<A>, Out<A>) {
        (self.sink.first.clone(), self.sink.second.clone())
    }

    pub fn awrite(&self, value: A) -> Eventual<()> {
        self.output().awrite(value)
    }

    pub async fn write(&self, value: A) -> Result<(), Failure> {
        self.output().write(value).await
    }
}

struct MergedSink<A: Clone + Send + 'static> {
    first: Out<A>,
    second: Out<A>,
    /// Flips every registration so simultaneous readiness alternates.
    flip: AtomicBool,
}

impl<A: Clone + Send + 'static> WriteSink<A> for MergedSink<A> {
    fn register(&self, waiter: WriteWaiter<A>) {
        // Decompose the incoming waiter into a one-shot claim plus the
        // action to run if both constituents close before any transfer.
        let inner_alive = waiter.alive;
        let claim_slot: Arc<Mutex<Option<Claim<A>>>>;
        let closed_act: Box<dyn FnOnce() + Send>;
        match waiter.kind {
            WriteWaiterKind::Ready { value, on_done } => {
                claim_slot = Arc::new(Mutex::new(Some(Box::new(move || Some((value, on_done))))));
                let slot = claim_slot.clone();
                closed_act = Box::new(move || {
                    if let Some(claim) = slot.lock().unwrap().take() {
                        if let Some((_, on_done)) = claim() {
                            on_done(Err(Failure::Closed));
                        }
                    }
                });
            }
            WriteWaiterKind::Deciding { decide, on_closed } => {
                claim_slot = Arc::new(Mutex::new(Some(decide)));
                let slot = claim_slot.clone();
                closed_act = Box::new(move || {
                    slot.lock().unwrap().take();
                    on_closed();
                });
            }
        }

        let arbiter = Arbiter::new();
        let open_sides = Arc::new(AtomicUsize::new(2));
        let closed_act = Arc::new(Mutex::new(Some(closed_act)));

        let side_waiter = |sink: &Out<A>| {
            let arb = arbiter.clone();
            let alive_inner = inner_alive.clone();
            let alive = Arc::new(move || {
                !arb.is_claimed() && alive_inner.as_ref().map_or(true, |probe| probe())
            });
            let arb = arbiter.clone();
            let slot = claim_slot.clone();
            let decide = Box::new(move || {
                if !arb.try_claim() {
                    return None;
                }
                slot.lock().unwrap().take().and_then(|claim| claim())
            });
            let open = open_sides.clone();
            let act = closed_act.clone();
            let on_closed = Box::new(move || {
                if open.fetch_sub(1, Ordering::SeqCst) == 1 {
                    if let Some(act) = act.lock().unwrap().take() {
                        act();
                    }
                }
            });
            sink.register(WriteWaiter {
                alive: Some(alive),
                kind: WriteWaiterKind::Deciding { decide, on_closed },
            });
        };

        if self.flip.fetch_xor(true, Ordering::SeqCst) {
            side_waiter(&self.second);
            side_waiter(&self.first);
        } else {
            side_waiter(&self.first);
            side_waiter(&self.second);
        }
    }

    fn close(&self) {
        self.first.close();
        self.second.close();
    }

    fn runtime(&self) -> Option<Gopher> {
        self.first.runtime().or_else(|| self.second.runtime())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::FlowTermination;

    #[test]
    fn ready_side_takes_the_write() {
        let g = Gopher::deterministic();
        let busy = g.rendezvous::<i32>(); // no readers: can't accept
        let free = g.growing::<i32>(); // always accepts
        let merged = MergedOutput::new(busy.output(), free.output());
        for v in 0..5 {
            assert_eq!(merged.awrite(v).try_take(), Some(Ok(())));
        }
        for v in 0..5 {
            assert_eq!(free.aread().try_take(), Some(Ok(v)));
        }
        assert!(!busy.is_closed());
    }

    #[test]
    fn simultaneous_readiness_alternates_fifty_fifty() {
        let g = Gopher::deterministic();
        let one = g.growing::<usize>();
        let two = g.growing::<usize>();
        let merged = MergedOutput::new(one.output(), two.output());
        for v in 0..100 {
            assert_eq!(merged.awrite(v).try_take(), Some(Ok(())));
        }
        let drain = |ch: &crate::channels::Channel<usize>| {
            let mut got = Vec::new();
            while let Some(Ok(v)) = ch.aread().try_take() {
                got.push(v);
            }
            got
        };
        one.close();
        two.close();
        let first: Vec<usize> = (0..100).step_by(2).collect();
        let second: Vec<usize> = (1..100).step_by(2).collect();
        assert_eq!(drain(&one), first);
        assert_eq!(drain(&two), second);
    }

    #[test]
    fn blocks_until_either_side_can_accept() {
        let g = Gopher::deterministic();
        let one = g.rendezvous::<i32>();
        let two = g.rendezvous::<i32>();
        let merged = MergedOutput::new(one.output(), two.output());
        let w = merged.awrite(42);
        assert!(!w.is_completed());
        let r = two.aread();
        assert_eq!(r.try_take(), Some(Ok(42)));
        assert_eq!(w.try_take(), Some(Ok(())));
    }

    #[test]
    fn claimed_write_leaves_other_side_clean() {
        let g = Gopher::deterministic();
        let one = g.rendezvous::<i32>();
        let two = g.rendezvous::<i32>();
        let merged = MergedOutput::new(one.output(), two.output());
        let w = merged.awrite(1);
        assert_eq!(one.aread().try_take(), Some(Ok(1)));
        assert_eq!(w.try_take(), Some(Ok(())));
        // The stale registration on `two` must not satisfy a later reader.
        let r = two.aread();
        assert!(!r.is_completed());
        two.awrite(99);
        assert_eq!(r.try_take(), Some(Ok(99)));
    }

    #[test]
    fn write_fails_only_when_both_closed() {
        let g = Gopher::deterministic();
        let one = g.rendezvous::<i32>();
        let two = g.growing::<i32>();
        let merged = MergedOutput::new(one.output(), two.output());
        one.close();
        assert_eq!(merged.awrite(7).try_take(), Some(Ok(()))); // second still open
        two.close();
        assert_eq!(merged.awrite(8).try_take(), Some(Err(Failure::Closed)));
    }

    #[test]
    fn pending_write_fails_when_remaining_side_closes() {
        let g = Gopher::deterministic();
        let one = g.rendezvous::<i32>();
        let two = g.rendezvous::<i32>();
        let merged = MergedOutput::new(one.output(), two.output());
        let w = merged.awrite(3);
        one.close();
        assert!(!w.is_completed());
        two.close();
        assert_eq!(w.try_take(), Some(Err(Failure::Closed)));
    }

    #[test]
    fn into_parts_returns_original_endpoints() {
        let g = Gopher::deterministic();
        let one = g.growing::<i32>();
        let two = g.growing::<i32>();
        let (o1, o2) = (one.output(), two.output());
        let merged = MergedOutput::new(o1.clone(), o2.clone());
        let (back1, back2) = merged.into_parts();
        assert_eq!(back1, o1);
        assert_eq!(back2, o2);
        assert_ne!(back1, o2);
    }

    #[test]
    fn deciding_writer_registers_through_merge() {
        // A value-producing decision (as a selector's write branch would
        // register) routed through a merged output: production happens at
        // claim time, exactly once.
        let g = Gopher::deterministic();
        let one = g.rendezvous::<i32>();
        let two = g.rendezvous::<i32>();
        let merged = MergedOutput::new(one.output(), two.output());
        let (ft, evt) = FlowTermination::new();
        let produced = Arc::new(AtomicUsize::new(0));
        let p = produced.clone();
        merged.output().register(WriteWaiter {
            alive: None,
            kind: WriteWaiterKind::Deciding {
                decide: Box::new(move || {
                    p.fetch_add(1, Ordering::SeqCst);
                    let ft = ft.clone();
                    Some((
                        11,
                        Box::new(move |res: Result<(), Failure>| match res {
                            Ok(()) => ft.complete(()),
                            Err(e) => ft.fail(e),
                        }) as WriteDone,
                    ))
                }),
                on_closed: Box::new(|| panic!("not closed in this test")),
            },
        });
        assert_eq!(produced.load(Ordering::SeqCst), 0); // nothing ready yet
        assert_eq!(two.aread().try_take(), Some(Ok(11)));
        assert_eq!(produced.load(Ordering::SeqCst), 1);
        assert_eq!(evt.try_take(), Some(Ok(())));
    }

    #[test]
    fn merged_output_closes_both_constituents() {
        let g = Gopher::deterministic();
        let one = g.growing::<i32>();
        let two = g.growing::<i32>();
        let merged = MergedOutput::new(one.output(), two.output());
        merged.output().close();
        assert!(one.is_closed());
        assert!(two.is_closed());
    }
}
