//! One-shot completion cells: the write side is a [`FlowTermination`], the
//! read side an [`Eventual`].
//!
//! Every asynchronous result in this crate — `aread`, `awrite`, process
//! handles, selector flows — is an `Eventual`. The pair completes exactly
//! once: later completion attempts are silently ignored.

use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::task::{Context, Poll, Waker};

use crate::error::Failure;

type CompletionCallback<T> = Box<dyn FnOnce(Result<T, Failure>) + Send>;

enum State<T> {
    Pending {
        waker: Option<Waker>,
        callback: Option<CompletionCallback<T>>,
    },
    Ready(Result<T, Failure>),
    /// The completion was handed to a consumer (poll, take, join or callback).
    Taken,
}

struct Shared<T> {
    state: Mutex<State<T>>,
    cond: Condvar,
    /// Whether any consumer ever looked at the read side; drives the
    /// unobserved-process-failure listener.
    observed: AtomicBool,
}

/// The read side of a one-shot completion. Single-consumer: it can be
/// awaited, joined, observed via [`Eventual::on_complete`] or drained with
/// [`Eventual::try_take`], but only one of those may consume the value.
pub struct Eventual<T> {
    shared: Arc<Shared<T>>,
}

/// The write side of a one-shot completion. Cloneable, so several racing
/// producers may hold it; only the first [`complete`](Self::complete) or
/// [`fail`](Self::fail) takes effect.
pub struct FlowTermination<T> {
    shared: Arc<Shared<T>>,
}

impl<T> Clone for FlowTermination<T> {
    fn clone(&self) -> Self {
        FlowTermination { shared: self.shared.clone() }
    }
}

impl<T: Send + 'static> FlowTermination<T> {
    /// Creates a connected (write side, read side) pair.
    pub fn new() -> (FlowTermination<T>, Eventual<T>) {
        let shared = Arc::new(Shared {
            state: Mutex::new(State::Pending { waker: None, callback: None }),
            cond: Condvar::new(),
            observed: AtomicBool::new(false),
        });
        (FlowTermination { shared: shared.clone() }, Eventual { shared })
    }

    /// Completes the flow with a value. No effect if already completed.
    pub fn complete(&self, value: T) {
        self.finish(Ok(value));
    }

    /// Completes the flow with a failure. No effect if already completed.
    pub fn fail(&self, failure: Failure) {
        self.finish(Err(failure));
    }

    fn finish(&self, result: Result<T, Failure>) {
        let wake;
        let mut deliver = None;
        {
            let mut st = self.shared.state.lock().unwrap();
            match &mut *st {
                State::Pending { waker, callback, .. } => {
                    wake = waker.take();
                    if let Some(cb) = callback.take() {
                        *st = State::Taken;
                        deliver = Some((cb, result));
                    } else {
                        *st = State::Ready(result);
                    }
                }
                State::Ready(_) | State::Taken => return,
            }
            self.shared.cond.notify_all();
        }
        // Wake and invoke outside the lock: both may run arbitrary scheduling code.
        if let Some(w) = wake {
            w.wake();
        }
        if let Some((cb, res)) = deliver {
            cb(res);
        }
    }

    /// True once the flow has completed (or its completion has been consumed).
    pub fn is_completed(&self) -> bool {
        !matches!(*self.shared.state.lock().unwrap(), State::Pending { .. })
    }

    /// True if a consumer has started observing the read side.
    pub(crate) fn is_observed(&self) -> bool {
        self.shared.observed.load(Ordering::SeqCst)
    }
}

impl<T: Send + 'static> Eventual<T> {
    /// An already-completed eventual holding `value`.
    pub fn ready(value: T) -> Eventual<T> {
        let (ft, evt) = FlowTermination::new();
        ft.complete(value);
        evt
    }

    /// An already-failed eventual.
    pub fn failed(failure: Failure) -> Eventual<T> {
        let (ft, evt) = FlowTermination::new();
        ft.fail(failure);
        evt
    }

    /// True once a completion value or failure is available (or consumed).
    pub fn is_completed(&self) -> bool {
        !matches!(*self.shared.state.lock().unwrap(), State::Pending { .. })
    }

    /// Records that someone intends to consume this eventual, so a failure
    /// settling before the actual take is still considered observed.
    pub(crate) fn mark_observed(&self) {
        self.shared.observed.store(true, Ordering::SeqCst);
    }

    /// Takes the completion if available. Marks the eventual as observed.
    pub fn try_take(&self) -> Option<Result<T, Failure>> {
        self.shared.observed.store(true, Ordering::SeqCst);
        let mut st = self.shared.state.lock().unwrap();
        match &mut *st {
            State::Pending { .. } => None,
            State::Ready(_) => {
                let State::Ready(res) = std::mem::replace(&mut *st, State::Taken) else {
                    unreachable!()
                };
                Some(res)
            }
            State::Taken => panic!("eventual completion was already consumed"),
        }
    }

    /// Blocks the calling thread until completion. Only meaningful on a
    /// multi-worker executor; on a deterministic executor nothing runs in the
    /// background, so drive it with [`Gopher::block_on`](crate::runtime::Gopher::block_on)
    /// instead.
    pub fn join(self) -> Result<T, Failure> {
        self.shared.observed.store(true, Ordering::SeqCst);
        let mut st = self.shared.state.lock().unwrap();
        loop {
            match &mut *st {
                State::Pending { .. } => {
                    st = self.shared.cond.wait(st).unwrap();
                }
                State::Ready(_) => {
                    let State::Ready(res) = std::mem::replace(&mut *st, State::Taken) else {
                        unreachable!()
                    };
                    return res;
                }
                State::Taken => panic!("eventual completion was already consumed"),
            }
        }
    }

    /// Runs `f` with the completion as soon as it is available, on whichever
    /// thread completes the flow (immediately if already completed). This
    /// consumes the read side; the eventual must not also be awaited.
    pub fn on_complete(self, f: impl FnOnce(Result<T, Failure>) + Send + 'static) {
        self.shared.observed.store(true, Ordering::SeqCst);
        let res = {
            let mut st = self.shared.state.lock().unwrap();
            match &mut *st {
                State::Pending { callback, .. } => {
                    if callback.is_some() {
                        panic!("eventual already has a completion consumer");
                    }
                    *callback = Some(Box::new(f));
                    return;
                }
                State::Ready(_) => {
                    let State::Ready(res) = std::mem::replace(&mut *st, State::Taken) else {
                        unreachable!()
                    };
                    res
                }
                State::Taken => panic!("eventual completion was already consumed"),
            }
        };
        f(res);
    }

    /// Transforms the completion value; failures pass through unchanged.
    /// Consumes the read side like [`Eventual::on_complete`].
    pub fn map<U: Send + 'static>(
        self,
        f: impl FnOnce(T) -> U + Send + 'static,
    ) -> Eventual<U> {
        let (ft, evt) = FlowTermination::new();
        self.on_complete(move |res| match res {
            Ok(v) => ft.complete(f(v)),
            Err(e) => ft.fail(e),
        });
        evt
    }
}

impl<T: Send + 'static> Future for Eventual<T> {
    type Output = Result<T, Failure>;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        self.shared.observed.store(true, Ordering::SeqCst);
        let mut st = self.shared.state.lock().unwrap();
        match &mut *st {
            State::Pending { waker, .. } => {
                *waker = Some(cx.waker().clone());
                Poll::Pending
            }
            State::Ready(_) => {
                let State::Ready(res) = std::mem::replace(&mut *st, State::Taken) else {
                    unreachable!()
                };
                Poll::Ready(res)
            }
            State::Taken => panic!("eventual polled after its completion was consumed"),
        }
    }
}
