//! The lightweight-process executor.
//!
//! Two operating modes:
//!
//! * **Multi-worker** (default): a fixed pool of worker threads consumes a
//!   shared FIFO run queue; a timer thread fires deadlines against the real
//!   clock.
//! * **Deterministic**: exactly one logical worker and no background threads.
//!   Work runs only when the owning thread calls [`Gopher::run_until_idle`],
//!   [`Gopher::block_on`] or [`Gopher::advance_virtual_time`], strictly in
//!   submission order, so two runs of the same program produce identical
//!   schedules. Optionally the clock is virtual and moves only when advanced.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{ConfigError, Failure};
use crate::runtime::clock::{Clock, TimerQueue};
use crate::runtime::eventual::{Eventual, FlowTermination};

/// Identifies a spawned process for logging and failure reporting.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessId(pub u64);

impl std::fmt::Display for ProcessId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "process-{}", self.0)
    }
}

/// How the executor schedules work. Validated by [`Gopher::new`]:
/// `deterministic` requires `workers == 1`, and `virtual_time` requires
/// `deterministic`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutorConfig {
    pub workers: usize,
    pub deterministic: bool,
    pub virtual_time: bool,
}

/// Environment variable overriding the default worker count.
pub const WORKERS_ENV_VAR: &str = "GOPHER_WORKERS";

impl ExecutorConfig {
    /// Multi-worker mode with an explicit worker count.
    pub fn threaded(workers: usize) -> ExecutorConfig {
        ExecutorConfig { workers, deterministic: false, virtual_time: false }
    }

    /// Single worker, FIFO submission order, real clock.
    pub fn deterministic() -> ExecutorConfig {
        ExecutorConfig { workers: 1, deterministic: true, virtual_time: false }
    }

    /// Single worker, FIFO submission order, virtual clock.
    pub fn virtual_time() -> ExecutorConfig {
        ExecutorConfig { workers: 1, deterministic: true, virtual_time: true }
    }

    /// The default worker count: `GOPHER_WORKERS` if set to a positive
    /// integer, otherwise the machine's available parallelism.
    pub fn default_workers() -> usize {
        if let Ok(raw) = std::env::var(WORKERS_ENV_VAR) {
            match raw.trim().parse::<usize>() {
                Ok(n) if n >= 1 => return n,
                _ => log::warn!("ignoring invalid {WORKERS_ENV_VAR}={raw:?}"),
            }
        }
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::ZeroWorkers);
        }
        if self.deterministic && self.workers != 1 {
            return Err(ConfigError::DeterministicNeedsOneWorker(self.workers));
        }
        if self.virtual_time && !self.deterministic {
            return Err(ConfigError::VirtualTimeNeedsDeterministic);
        }
        Ok(())
    }
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig::threaded(ExecutorConfig::default_workers())
    }
}

pub(crate) type Job = Box<dyn FnOnce() + Send>;

type FailureListener = Arc<dyn Fn(ProcessId, &Failure) + Send + Sync>;

pub(crate) struct RuntimeInner {
    pub(crate) cfg: ExecutorConfig,
    run_queue: Mutex<VecDeque<Job>>,
    queue_cond: Condvar,
    timers: Mutex<TimerQueue>,
    timer_cond: Condvar,
    pub(crate) clock: Clock,
    shutdown: AtomicBool,
    next_pid: AtomicU64,
    failure_listener: Mutex<FailureListener>,
}

impl RuntimeInner {
    pub(crate) fn schedule(&self, job: Job) -> Result<(), Failure> {
        if self.shutdown.load(Ordering::SeqCst) {
            return Err(Failure::Shutdown);
        }
        self.run_queue.lock().unwrap().push_back(job);
        self.queue_cond.notify_one();
        Ok(())
    }

    pub(crate) fn add_timer(&self, delay: Duration, action: Box<dyn FnOnce() + Send>) {
        let deadline = self.clock.now() + delay;
        self.timers.lock().unwrap().push(deadline, action);
        self.timer_cond.notify_all();
    }

    pub(crate) fn next_pid(&self) -> ProcessId {
        ProcessId(self.next_pid.fetch_add(1, Ordering::Relaxed))
    }

    pub(crate) fn is_shut_down(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    pub(crate) fn report_process_failure(&self, id: ProcessId, failure: &Failure) {
        let listener = self.failure_listener.lock().unwrap().clone();
        listener(id, failure);
    }

    fn begin_shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.queue_cond.notify_all();
        self.timer_cond.notify_all();
    }

    fn worker_loop(&self) {
        loop {
            let job = {
                let mut q = self.run_queue.lock().unwrap();
                loop {
                    if self.shutdown.load(Ordering::SeqCst) {
                        return;
                    }
                    if let Some(job) = q.pop_front() {
                        break job;
                    }
                    q = self.queue_cond.wait(q).unwrap();
                }
            };
            job();
        }
    }

    fn timer_loop(&self) {
        loop {
            let due = {
                let mut t = self.timers.lock().unwrap();
                loop {
                    if self.shutdown.load(Ordering::SeqCst) {
                        return;
                    }
                    let now = self.clock.now();
                    match t.next_deadline() {
                        Some(deadline) if deadline <= now => break t.pop_due(now).unwrap(),
                        Some(deadline) => {
                            let (guard, _) =
                                self.timer_cond.wait_timeout(t, deadline - now).unwrap();
                            t = guard;
                        }
                        None => t = self.timer_cond.wait(t).unwrap(),
                    }
                }
            };
            // Run timer actions on the worker pool to keep all user-visible
            // work on workers; if the executor is shutting down, drop it.
            let _ = self.schedule(due.action);
        }
    }
}

/// Joins background threads and flips the shutdown flag once the last
/// user-facing [`Gopher`] handle is dropped.
struct Owner {
    inner: Arc<RuntimeInner>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Drop for Owner {
    fn drop(&mut self) {
        self.inner.begin_shutdown();
        for t in self.threads.lock().unwrap().drain(..) {
            let _ = t.join();
        }
    }
}

/// Handle to a running executor: the entry point for creating channels,
/// spawning processes, timers and selectors. Cloning is cheap; the executor
/// shuts down when the last public handle is dropped.
#[derive(Clone)]
pub struct Gopher {
    pub(crate) inner: Arc<RuntimeInner>,
    _owner: Option<Arc<Owner>>,
}

impl Gopher {
    pub fn new(cfg: ExecutorConfig) -> Result<Gopher, ConfigError> {
        cfg.validate()?;
        let clock = if cfg.virtual_time { Clock::virtual_() } else { Clock::real() };
        let inner = Arc::new(RuntimeInner {
            cfg: cfg.clone(),
            run_queue: Mutex::new(VecDeque::new()),
            queue_cond: Condvar::new(),
            timers: Mutex::new(TimerQueue::default()),
            timer_cond: Condvar::new(),
            clock,
            shutdown: AtomicBool::new(false),
            next_pid: AtomicU64::new(0),
            failure_listener: Mutex::new(Arc::new(|id: ProcessId, failure: &Failure| {
                log::error!("{id} failed with no observer: {failure}");
            })),
        });

        let mut threads = Vec::new();
        if !cfg.deterministic {
            for i in 0..cfg.workers {
                let rt = inner.clone();
                threads.push(
                    std::thread::Builder::new()
                        .name(format!("gopher-worker-{i}"))
                        .spawn(move || rt.worker_loop())
                        .expect("failed to spawn worker thread"),
                );
            }
            let rt = inner.clone();
            threads.push(
                std::thread::Builder::new()
                    .name("gopher-timer".into())
                    .spawn(move || rt.timer_loop())
                    .expect("failed to spawn timer thread"),
            );
        }

        Ok(Gopher { inner: inner.clone(), _owner: Some(Arc::new(Owner { inner, threads: Mutex::new(threads) })) })
    }

    /// Multi-worker executor with the default worker count
    /// (`GOPHER_WORKERS` or available parallelism).
    pub fn with_default_config() -> Gopher {
        Gopher::new(ExecutorConfig::default()).expect("default config is valid")
    }

    /// Multi-worker executor with an explicit worker count.
    pub fn threaded(workers: usize) -> Result<Gopher, ConfigError> {
        Gopher::new(ExecutorConfig::threaded(workers))
    }

    /// Deterministic single-worker executor (real clock).
    pub fn deterministic() -> Gopher {
        Gopher::new(ExecutorConfig::deterministic()).expect("deterministic config is valid")
    }

    /// Deterministic single-worker executor with a virtual clock.
    pub fn virtual_time() -> Gopher {
        Gopher::new(ExecutorConfig::virtual_time()).expect("virtual-time config is valid")
    }

    /// Internal handle used by channels; carries no ownership of the
    /// executor's lifetime.
    pub(crate) fn from_inner(inner: Arc<RuntimeInner>) -> Gopher {
        Gopher { inner, _owner: None }
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.inner.cfg
    }

    /// Time since the runtime started, per its (real or virtual) clock.
    pub fn now(&self) -> Duration {
        self.inner.clock.now()
    }

    /// An eventual completing after `delay` on the runtime clock.
    pub fn after(&self, delay: Duration) -> Eventual<()> {
        if self.inner.is_shut_down() {
            return Eventual::failed(Failure::Shutdown);
        }
        let (ft, evt) = FlowTermination::new();
        self.inner.add_timer(delay, Box::new(move || ft.complete(())));
        evt
    }

    /// Suspends the calling process for `delay` on the runtime clock.
    pub async fn sleep(&self, delay: Duration) -> Result<(), Failure> {
        self.after(delay).await
    }

    /// Replaces the listener notified when a process fails and nothing
    /// observes its handle. The default logs via the `log` crate.
    pub fn set_process_failure_listener(
        &self,
        listener: impl Fn(ProcessId, &Failure) + Send + Sync + 'static,
    ) {
        *self.inner.failure_listener.lock().unwrap() = Arc::new(listener);
    }

    /// Runs queued work on the calling thread until the run queue is empty.
    /// Deterministic mode only.
    pub fn run_until_idle(&self) -> Result<(), Failure> {
        if !self.inner.cfg.deterministic {
            return Err(Failure::usage("run_until_idle requires deterministic mode"));
        }
        loop {
            if self.inner.is_shut_down() {
                return Err(Failure::Shutdown);
            }
            let job = self.inner.run_queue.lock().unwrap().pop_front();
            match job {
                Some(job) => job(),
                None => return Ok(()),
            }
        }
    }

    /// Moves the virtual clock forward by `delta`, firing every timer whose
    /// deadline falls inside the window in deadline order and draining the
    /// run queue after each firing.
    pub fn advance_virtual_time(&self, delta: Duration) -> Result<(), Failure> {
        if !self.inner.clock.is_virtual() {
            return Err(Failure::usage("advance_virtual_time requires a virtual-time executor"));
        }
        self.run_until_idle()?;
        let target = self.inner.clock.now() + delta;
        loop {
            let due = self.inner.timers.lock().unwrap().pop_due(target);
            match due {
                Some(entry) => {
                    self.inner.clock.set_virtual(entry.deadline);
                    (entry.action)();
                    self.run_until_idle()?;
                }
                None => break,
            }
        }
        self.inner.clock.set_virtual(target);
        Ok(())
    }

    /// Drives the executor until `evt` completes and returns its result.
    ///
    /// On a multi-worker executor this blocks the calling thread. On a
    /// deterministic executor it runs the work inline, sleeping to (real
    /// clock) or jumping over (virtual clock) timer deadlines; if the run
    /// queue empties with no timers pending it reports [`Failure::Deadlock`].
    pub fn block_on<T: Send + 'static>(&self, evt: impl Into<Eventual<T>>) -> Result<T, Failure> {
        let evt: Eventual<T> = evt.into();
        evt.mark_observed();
        if !self.inner.cfg.deterministic {
            return evt.join();
        }
        loop {
            self.run_until_idle()?;
            if evt.is_completed() {
                return evt.try_take().expect("completed eventual");
            }
            let next = self.inner.timers.lock().unwrap().next_deadline();
            match next {
                Some(deadline) => {
                    if self.inner.clock.is_virtual() {
                        let now = self.inner.clock.now();
                        self.advance_virtual_time(deadline.saturating_sub(now))?;
                    } else {
                        let now = self.inner.clock.now();
                        if deadline > now {
                            std::thread::sleep(deadline - now);
                        }
                        self.fire_due_real_timers();
                    }
                }
                None => return Err(Failure::Deadlock),
            }
        }
    }

    fn fire_due_real_timers(&self) {
        loop {
            let due = self.inner.timers.lock().unwrap().pop_due(self.inner.clock.now());
            match due {
                Some(entry) => (entry.action)(),
                None => break,
            }
        }
    }
}
