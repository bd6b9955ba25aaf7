//! Lightweight processes: spawned futures with Go-style `defer`/`recover`
//! cleanup semantics.
//!
//! A process body is any `Future<Output = Result<T, Failure>>`. Suspension
//! points (channel reads, writes, sleeps) suspend the *process*, never the
//! worker thread, so hundreds of thousands of processes can share one worker.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::future::Future;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::task::{Context, Poll, Wake, Waker};

use crate::error::Failure;
use crate::runtime::eventual::{Eventual, FlowTermination};
use crate::runtime::executor::{Gopher, ProcessId, RuntimeInner};

/// Handle to a spawned process. Consume it (await, [`join`](Self::join),
/// [`Gopher::block_on`]) to observe the result; if a process fails and its
/// handle was never observed, the runtime's process-failure listener is
/// notified instead.
pub struct ProcessHandle<T> {
    id: ProcessId,
    result: Eventual<T>,
}

impl<T: Send + 'static> ProcessHandle<T> {
    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn is_completed(&self) -> bool {
        self.result.is_completed()
    }

    /// The process result as an eventual.
    pub fn result(self) -> Eventual<T> {
        self.result
    }

    /// Blocks the calling thread until the process completes
    /// (multi-worker executors only; see [`Eventual::join`]).
    pub fn join(self) -> Result<T, Failure> {
        self.result.join()
    }
}

impl<T: Send + 'static> From<ProcessHandle<T>> for Eventual<T> {
    fn from(h: ProcessHandle<T>) -> Eventual<T> {
        h.result
    }
}

struct ProcessCtx {
    id: ProcessId,
    defers: Mutex<Vec<Box<dyn FnOnce() + Send>>>,
    failing: Mutex<Option<Failure>>,
    recovered: Mutex<Option<Box<dyn Any + Send>>>,
    result_type: TypeId,
    in_defer: AtomicBool,
}

thread_local! {
    static CURRENT_PROCESS: RefCell<Option<Arc<ProcessCtx>>> = const { RefCell::new(None) };
}

/// Registers a cleanup action on the current process. Actions run when the
/// process body completes (normally or with a failure), newest first.
///
/// # Panics
/// Panics if called outside a running process.
pub fn defer(action: impl FnOnce() + Send + 'static) {
    CURRENT_PROCESS.with(|c| match &*c.borrow() {
        Some(ctx) => ctx.defers.lock().unwrap().push(Box::new(action)),
        None => panic!("defer called outside a process"),
    });
}

/// Inside a deferred action, offers `handler` the failure the process is
/// currently failing with. If the handler returns `Some(v)`, the failure is
/// swallowed and the process result becomes `v`; on `None` the failure keeps
/// propagating. Does nothing if the process is not failing.
///
/// `T` must be the process's result type.
///
/// # Panics
/// Panics if called outside a deferred action, or with the wrong `T`.
pub fn recover<T: Send + 'static>(handler: impl FnOnce(&Failure) -> Option<T>) {
    CURRENT_PROCESS.with(|c| {
        let ctx = match &*c.borrow() {
            Some(ctx) => ctx.clone(),
            None => panic!("recover called outside a process"),
        };
        if !ctx.in_defer.load(Ordering::SeqCst) {
            panic!("recover called outside a deferred action");
        }
        if ctx.result_type != TypeId::of::<T>() {
            panic!("recover::<T> must use the process result type");
        }
        let mut failing = ctx.failing.lock().unwrap();
        if let Some(failure) = failing.as_ref() {
            if let Some(value) = handler(failure) {
                *ctx.recovered.lock().unwrap() = Some(Box::new(value));
                *failing = None;
            }
        }
    });
}

const IDLE: u8 = 0;
const QUEUED: u8 = 1;
const RUNNING: u8 = 2;
const NOTIFIED: u8 = 3;
const DONE: u8 = 4;

type ProcessBody<T> = Pin<Box<dyn Future<Output = Result<T, Failure>> + Send>>;

struct Task<T> {
    runtime: Weak<RuntimeInner>,
    state: AtomicU8,
    body: Mutex<Option<ProcessBody<T>>>,
    ctx: Arc<ProcessCtx>,
    ft: FlowTermination<T>,
}

impl<T: Send + 'static> Wake for Task<T> {
    fn wake(self: Arc<Self>) {
        Task::schedule_poll(&self);
    }

    fn wake_by_ref(self: &Arc<Self>) {
        Task::schedule_poll(self);
    }
}

impl<T: Send + 'static> Task<T> {
    /// Queues the task for polling unless it is already queued, completed,
    /// or mid-poll (in which case the poll is flagged to repeat).
    fn schedule_poll(task: &Arc<Task<T>>) {
        loop {
            match task.state.load(Ordering::SeqCst) {
                IDLE => {
                    if task
                        .state
                        .compare_exchange(IDLE, QUEUED, Ordering::SeqCst, Ordering::SeqCst)
                        .is_ok()
                    {
                        let t = task.clone();
                        let pushed = task
                            .runtime
                            .upgrade()
                            .map(|rt| rt.schedule(Box::new(move || Task::run(t))));
                        match pushed {
                            Some(Ok(())) => {}
                            Some(Err(_)) | None => {
                                task.state.store(DONE, Ordering::SeqCst);
                                *task.body.lock().unwrap() = None;
                                task.ft.fail(Failure::Shutdown);
                            }
                        }
                        return;
                    }
                }
                RUNNING => {
                    if task
                        .state
                        .compare_exchange(RUNNING, NOTIFIED, Ordering::SeqCst, Ordering::SeqCst)
                        .is_ok()
                    {
                        return;
                    }
                }
                QUEUED | NOTIFIED | DONE => return,
                other => unreachable!("task state {other}"),
            }
        }
    }

    fn run(task: Arc<Task<T>>) {
        task.state.store(RUNNING, Ordering::SeqCst);
        let mut body_slot = task.body.lock().unwrap();
        let Some(body) = body_slot.as_mut() else {
            task.state.store(DONE, Ordering::SeqCst);
            return;
        };

        let waker = Waker::from(task.clone());
        let mut cx = Context::from_waker(&waker);

        let previous = CURRENT_PROCESS.with(|c| c.borrow_mut().replace(task.ctx.clone()));
        let polled = catch_unwind(AssertUnwindSafe(|| body.as_mut().poll(&mut cx)));
        CURRENT_PROCESS.with(|c| *c.borrow_mut() = previous);

        match polled {
            Ok(Poll::Pending) => {
                drop(body_slot);
                loop {
                    match task.state.compare_exchange(
                        RUNNING,
                        IDLE,
                        Ordering::SeqCst,
                        Ordering::SeqCst,
                    ) {
                        Ok(_) => return,
                        Err(NOTIFIED) => {
                            // A wake arrived mid-poll: go around again.
                            task.state.store(IDLE, Ordering::SeqCst);
                            Task::schedule_poll(&task);
                            return;
                        }
                        Err(other) => unreachable!("task state {other} after poll"),
                    }
                }
            }
            Ok(Poll::Ready(result)) => {
                *body_slot = None;
                drop(body_slot);
                Task::finish(&task, result);
            }
            Err(panic) => {
                *body_slot = None;
                drop(body_slot);
                Task::finish(&task, Err(Failure::from_panic(panic)));
            }
        }
    }

    /// Runs deferred actions (newest first) and settles the process result.
    /// A deferred action that fails supersedes the body's outcome unless a
    /// later-running (outer) deferred action recovers.
    fn finish(task: &Arc<Task<T>>, result: Result<T, Failure>) {
        let ctx = &task.ctx;
        let mut body_value = None;
        match result {
            Ok(v) => body_value = Some(v),
            Err(e) => *ctx.failing.lock().unwrap() = Some(e),
        }

        let previous = CURRENT_PROCESS.with(|c| c.borrow_mut().replace(ctx.clone()));
        loop {
            let deferred = ctx.defers.lock().unwrap().pop();
            let Some(deferred) = deferred else { break };
            ctx.in_defer.store(true, Ordering::SeqCst);
            let outcome = catch_unwind(AssertUnwindSafe(deferred));
            ctx.in_defer.store(false, Ordering::SeqCst);
            if let Err(panic) = outcome {
                *ctx.failing.lock().unwrap() = Some(Failure::from_panic(panic));
                *ctx.recovered.lock().unwrap() = None;
            }
        }
        CURRENT_PROCESS.with(|c| *c.borrow_mut() = previous);

        task.state.store(DONE, Ordering::SeqCst);
        let failing = ctx.failing.lock().unwrap().take();
        if let Some(failure) = failing {
            task.ft.fail(failure.clone());
            if !task.ft.is_observed() {
                if let Some(rt) = task.runtime.upgrade() {
                    rt.report_process_failure(ctx.id, &failure);
                }
            }
            return;
        }
        let recovered = ctx.recovered.lock().unwrap().take();
        match recovered {
            Some(boxed) => match boxed.downcast::<T>() {
                Ok(v) => task.ft.complete(*v),
                Err(_) => task.ft.fail(Failure::usage(
                    "recovery value type does not match the process result type",
                )),
            },
            None => {
                task.ft.complete(body_value.expect("process finished without value or failure"))
            }
        }
    }
}

impl Gopher {
    /// Starts a lightweight process running `body` and returns its handle.
    ///
    /// The body reports failure by returning `Err` (a panic inside the body
    /// is also converted to a [`Failure`]). Deferred actions registered with
    /// [`defer`] run when the body completes, newest first; a deferred action
    /// may [`recover`] a failing process.
    pub fn spawn<T, F>(&self, body: F) -> ProcessHandle<T>
    where
        T: Send + 'static,
        F: Future<Output = Result<T, Failure>> + Send + 'static,
    {
        let id = self.inner.next_pid();
        let (ft, result) = FlowTermination::new();
        let ctx = Arc::new(ProcessCtx {
            id,
            defers: Mutex::new(Vec::new()),
            failing: Mutex::new(None),
            recovered: Mutex::new(None),
            result_type: TypeId::of::<T>(),
            in_defer: AtomicBool::new(false),
        });
        let task = Arc::new(Task {
            runtime: Arc::downgrade(&self.inner),
            state: AtomicU8::new(IDLE),
            body: Mutex::new(Some(Box::pin(body))),
            ctx,
            ft,
        });
        Task::schedule_poll(&task);
        ProcessHandle { id, result }
    }
}
