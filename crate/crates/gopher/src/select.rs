//! Selectors: mutually exclusive choice over channel reads, writes and
//! timeouts.
//!
//! A selector runs in rounds. Each round registers a decision callback on
//! every branch's channel (plus one timer for a timeout branch); the first
//! event to become available claims the round through a shared atomic
//! arbiter, every other registration is invalidated, and the winning
//! branch's body runs to completion before the next round begins — so at
//! most one body executes at any instant. Registration order rotates by one
//! each round, which keeps simultaneously-ready branches fair.
//!
//! Bodies receive the selector state and return a [`Verdict`]: either
//! [`proceed`] into the next round with new state or [`exit`] to complete
//! the selector's flow. Ending policies:
//!
//! - [`SelectBuilder::once`] — exactly one round.
//! - [`SelectBuilder::forever`] — rounds repeat until a body exits.
//! - [`SelectBuilder::fold`] — like `forever`, threading a state value
//!   through every body.
//!
//! Branch endpoints may be fixed at build time ([`SelectBuilder::on_read`],
//! [`SelectBuilder::on_write`]) or re-resolved from the current state every
//! round ([`SelectBuilder::on_read_from`], [`SelectBuilder::on_write_to`]),
//! which allows a fold's state to *be* a channel expression — replacing a
//! generator endpoint with a filtered view of itself, or a write endpoint
//! with a merged pair.
//!
//! A read branch observing end-of-input fails the selector's flow with
//! [`Failure::EndOfInput`]; a write branch whose channel closes fails it
//! with [`Failure::Closed`].

use std::any::Any;
use std::future::Future;
use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::channels::{
    Arbiter, Consumer, In, Out, ReadIn, ReadWaiter, ReadWaiterKind, WriteDone, WriteWaiter,
    WriteWaiterKind,
};
use crate::error::Failure;
use crate::runtime::{Eventual, FlowTermination, Gopher};

/// What a branch body decides: continue with new state, or complete the
/// selector's flow with a result.
pub type Verdict<S, R> = Result<ControlFlow<R, S>, Failure>;

/// Continue into the next round carrying `state`.
pub fn proceed<S, R>(state: S) -> Verdict<S, R> {
    Ok(ControlFlow::Continue(state))
}

/// Complete the selector's flow with `value`; no further rounds run.
pub fn exit<S, R>(value: R) -> Verdict<S, R> {
    Ok(ControlFlow::Break(value))
}

type Payload = Box<dyn Any + Send>;
type RoundFt = FlowTermination<(usize, Payload)>;
type BodyFuture<S, R> = Pin<Box<dyn Future<Output = Verdict<S, R>> + Send>>;

struct Branch<S, R> {
    /// Registers this branch's waiter (or timer) for one round.
    arm: Box<dyn FnMut(&RoundCtx<S>) + Send>,
    /// Runs after this branch won the round.
    body: Box<dyn FnMut(Payload, S) -> BodyFuture<S, R> + Send>,
}

struct RoundCtx<S> {
    g: Gopher,
    arbiter: Arc<Arbiter>,
    ft: RoundFt,
    /// Holds the selector state while registrations are live, so write
    /// branches can produce their value from it at claim time.
    state: Arc<Mutex<Option<S>>>,
    index: usize,
}

/// Accumulates selector branches, then runs them under one of the three
/// policies. Branches fire in availability order with rotating tie-breaks;
/// see the [module docs](self).
pub struct SelectBuilder<S: Send + 'static, R: Send + 'static> {
    g: Gopher,
    branches: Vec<Branch<S, R>>,
    timeouts: usize,
}

impl Gopher {
    /// Starts building a selector. `S` is the threaded state type (`()` for
    /// `once`/`forever`), `R` the result delivered by [`exit`].
    pub fn select<S: Send + 'static, R: Send + 'static>(&self) -> SelectBuilder<S, R> {
        SelectBuilder { g: self.clone(), branches: Vec::new(), timeouts: 0 }
    }
}

impl<S: Send + 'static, R: Send + 'static> SelectBuilder<S, R> {
    /// Adds a read branch on a fixed endpoint. When it wins a round, `body`
    /// runs with the value read and the current state.
    pub fn on_read<A, F, Fut>(self, ch: &In<A>, body: F) -> Self
    where
        A: Clone + Send + 'static,
        F: FnMut(A, S) -> Fut + Send + 'static,
        Fut: Future<Output = Verdict<S, R>> + Send + 'static,
    {
        let ch = ch.clone();
        self.on_read_from(move |_| ch.clone(), body)
    }

    /// Adds a read branch whose endpoint is re-resolved from the current
    /// state at the start of every round.
    pub fn on_read_from<A, Res, F, Fut>(mut self, resolve: Res, mut body: F) -> Self
    where
        A: Clone + Send + 'static,
        Res: Fn(&S) -> In<A> + Send + 'static,
        F: FnMut(A, S) -> Fut + Send + 'static,
        Fut: Future<Output = Verdict<S, R>> + Send + 'static,
    {
        let arm = Box::new(move |ctx: &RoundCtx<S>| {
            let ch = {
                let guard = ctx.state.lock().unwrap();
                resolve(guard.as_ref().expect("selector state is held while arming"))
            };
            let claim = ctx.arbiter.clone();
            let probe = ctx.arbiter.clone();
            let ft = ctx.ft.clone();
            let index = ctx.index;
            ch.register(ReadWaiter {
                alive: Some(Arc::new(move || !probe.is_claimed())),
                gate: None,
                kind: ReadWaiterKind::Deciding {
                    decide: Box::new(move || {
                        if !claim.try_claim() {
                            return None;
                        }
                        Some(Box::new(move |read_in: ReadIn<A>| match read_in {
                            ReadIn::Value(v) => ft.complete((index, Box::new(v) as Payload)),
                            ReadIn::Closed => ft.fail(Failure::EndOfInput),
                            ReadIn::Failure(f) => ft.fail(f),
                        }) as Consumer<A>)
                    }),
                },
            });
        });
        let body = Box::new(move |payload: Payload, s: S| -> BodyFuture<S, R> {
            let v = *payload.downcast::<A>().expect("read branch payload carries the read value");
            Box::pin(body(v, s))
        });
        self.branches.push(Branch { arm, body });
        self
    }

    /// Adds a write branch on a fixed endpoint. `produce` computes the value
    /// from the current state at claim time — when the channel can actually
    /// accept it, not when the round is armed. After the transfer, `body`
    /// runs with the current state.
    pub fn on_write<A, P, F, Fut>(self, ch: &Out<A>, produce: P, body: F) -> Self
    where
        A: Clone + Send + 'static,
        P: Fn(&S) -> A + Send + Sync + 'static,
        F: FnMut(S) -> Fut + Send + 'static,
        Fut: Future<Output = Verdict<S, R>> + Send + 'static,
    {
        let ch = ch.clone();
        self.on_write_to(move |_| ch.clone(), produce, body)
    }

    /// Adds a write branch whose endpoint is re-resolved from the current
    /// state at the start of every round.
    pub fn on_write_to<A, Res, P, F, Fut>(mut self, resolve: Res, produce: P, mut body: F) -> Self
    where
        A: Clone + Send + 'static,
        Res: Fn(&S) -> Out<A> + Send + 'static,
        P: Fn(&S) -> A + Send + Sync + 'static,
        F: FnMut(S) -> Fut + Send + 'static,
        Fut: Future<Output = Verdict<S, R>> + Send + 'static,
    {
        let produce = Arc::new(produce);
        let arm = Box::new(move |ctx: &RoundCtx<S>| {
            let ch = {
                let guard = ctx.state.lock().unwrap();
                resolve(guard.as_ref().expect("selector state is held while arming"))
            };
            let claim = ctx.arbiter.clone();
            let probe = ctx.arbiter.clone();
            let ft = ctx.ft.clone();
            let ft_closed = ctx.ft.clone();
            let slot = ctx.state.clone();
            let produce = produce.clone();
            let index = ctx.index;
            ch.register(WriteWaiter {
                alive: Some(Arc::new(move || !probe.is_claimed())),
                kind: WriteWaiterKind::Deciding {
                    decide: Box::new(move || {
                        if !claim.try_claim() {
                            return None;
                        }
                        let produced = {
                            let guard = slot.lock().unwrap();
                            let state =
                                guard.as_ref().expect("selector state is held during the round");
                            catch_unwind(AssertUnwindSafe(|| produce(state)))
                        };
                        match produced {
                            Ok(value) => Some((
                                value,
                                Box::new(move |res: Result<(), Failure>| match res {
                                    Ok(()) => ft.complete((index, Box::new(()) as Payload)),
                                    Err(f) => ft.fail(f),
                                }) as WriteDone,
                            )),
                            Err(p) => {
                                ft.fail(Failure::from_panic(p));
                                None
                            }
                        }
                    }),
                    on_closed: Box::new(move || ft_closed.fail(Failure::Closed)),
                },
            });
        });
        let body =
            Box::new(move |_payload: Payload, s: S| -> BodyFuture<S, R> { Box::pin(body(s)) });
        self.branches.push(Branch { arm, body });
        self
    }

    /// Adds the timeout branch: if no other branch settles within `delay`
    /// of the round starting, `body` fires. The timer restarts every round.
    /// At most one timeout branch is allowed per selector.
    pub fn with_timeout<F, Fut>(mut self, delay: Duration, mut body: F) -> Self
    where
        F: FnMut(S) -> Fut + Send + 'static,
        Fut: Future<Output = Verdict<S, R>> + Send + 'static,
    {
        self.timeouts += 1;
        let arm = Box::new(move |ctx: &RoundCtx<S>| {
            let claim = ctx.arbiter.clone();
            let ft = ctx.ft.clone();
            let index = ctx.index;
            ctx.g.inner.add_timer(
                delay,
                Box::new(move || {
                    if claim.try_claim() {
                        ft.complete((index, Box::new(()) as Payload));
                    }
                }),
            );
        });
        let body =
            Box::new(move |_payload: Payload, s: S| -> BodyFuture<S, R> { Box::pin(body(s)) });
        self.branches.push(Branch { arm, body });
        self
    }

    /// Runs rounds until a body exits, threading `initial` through every
    /// body, and completes with the exit value.
    pub fn fold(self, initial: S) -> Eventual<R> {
        self.run(initial)
    }

    fn run(self, initial: S) -> Eventual<R> {
        if self.branches.is_empty() {
            return Eventual::failed(Failure::usage("selector needs at least one branch"));
        }
        if self.timeouts > 1 {
            return Eventual::failed(Failure::usage(
                "selector allows at most one timeout branch",
            ));
        }
        let g = self.g.clone();
        let mut branches = self.branches;
        let n = branches.len();
        let state = Arc::new(Mutex::new(None::<S>));
        g.clone()
            .spawn(async move {
                let mut rotation = 0usize;
                let mut s = initial;
                loop {
                    *state.lock().unwrap() = Some(s);
                    let arbiter = Arbiter::new();
                    let (ft, round) = FlowTermination::new();
                    for k in 0..n {
                        let index = (rotation + k) % n;
                        let ctx = RoundCtx {
                            g: g.clone(),
                            arbiter: arbiter.clone(),
                            ft: ft.clone(),
                            state: state.clone(),
                            index,
                        };
                        (branches[index].arm)(&ctx);
                        if round.is_completed() {
                            break; // round already settled: skip arming the rest
                        }
                    }
                    rotation = (rotation + 1) % n;
                    let (winner, payload) = round.await?;
                    let current =
                        state.lock().unwrap().take().expect("state present after a round");
                    match (branches[winner].body)(payload, current).await? {
                        ControlFlow::Continue(next) => s = next,
                        ControlFlow::Break(result) => return Ok(result),
                    }
                }
            })
            .into()
    }
}

impl<R: Send + 'static> SelectBuilder<(), R> {
    /// Runs rounds until a body exits; completes with the exit value.
    pub fn forever(self) -> Eventual<R> {
        self.run(())
    }
}

impl SelectBuilder<(), ()> {
    /// Runs exactly one round: the first branch to have an event fires, its
    /// body runs to completion, and the flow completes.
    pub fn once(mut self) -> Eventual<()> {
        for branch in &mut self.branches {
            let mut inner = std::mem::replace(
                &mut branch.body,
                Box::new(|_, _| Box::pin(async { proceed(()) })),
            );
            branch.body = Box::new(move |payload, s| {
                let fut = inner(payload, s);
                Box::pin(async move {
                    match fut.await? {
                        ControlFlow::Break(r) => Ok(ControlFlow::Break(r)),
                        ControlFlow::Continue(()) => Ok(ControlFlow::Break(())),
                    }
                })
            });
        }
        self.run(())
    }
}
