//! Failure values carried by processes, channel operations and selector flows.

use std::sync::Arc;

/// Why a process, channel operation or selector flow did not produce a value.
///
/// `Failure` is cheap to clone so a single failure can propagate through
/// several flows (e.g. a merged output failing both constituents' writers).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Failure {
    /// A write was attempted on (or was still pending when a channel became) closed.
    #[error("channel is closed")]
    Closed,
    /// A read found the channel closed with no buffered values left,
    /// or a selector branch hit the end of its input.
    #[error("end of input")]
    EndOfInput,
    /// The executor was shut down before the operation could run.
    #[error("executor is shut down")]
    Shutdown,
    /// The runtime detected that no further progress is possible
    /// (deterministic mode only: empty run queue, no timers, result pending).
    #[error("deadlock: no runnable work and no timers, but the awaited result is pending")]
    Deadlock,
    /// An API was used outside its contract.
    #[error("usage error: {0}")]
    Usage(Arc<str>),
    /// A process body or deferred action panicked.
    #[error("process panicked: {0}")]
    Panicked(Arc<str>),
    /// An application-level failure, e.g. injected by a test or demo.
    #[error("{0}")]
    App(Arc<str>),
}

impl Failure {
    /// Application-level failure with a message.
    pub fn msg(text: impl Into<String>) -> Self {
        Failure::App(Arc::from(text.into()))
    }

    /// Contract-violation failure (misused API, invalid parameter).
    pub fn usage(text: impl Into<String>) -> Self {
        Failure::Usage(Arc::from(text.into()))
    }

    pub(crate) fn from_panic(payload: Box<dyn std::any::Any + Send>) -> Self {
        let text = payload
            .downcast_ref::<&'static str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "non-string panic payload".to_string());
        Failure::Panicked(Arc::from(text))
    }
}

/// Errors raised while *defining* a transputer or wiring a replicated group,
/// before anything runs.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DefinitionError {
    #[error("duplicate port name {0:?}")]
    DuplicatePort(String),
    #[error("transputer {0:?} has no loop branches")]
    NoBranches(String),
    #[error("port {0:?} is not bound to a channel")]
    UnboundPort(String),
    #[error("no port named {0:?} with the requested element type")]
    NoSuchPort(String),
    #[error("out-port {0:?} supports only the Share policy")]
    NonShareOutPort(String),
    #[error("replication factor must be at least 1")]
    ZeroReplicas,
}

/// Errors raised when validating an [`ExecutorConfig`](crate::runtime::ExecutorConfig).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("deterministic mode requires exactly 1 worker (got {0})")]
    DeterministicNeedsOneWorker(usize),
    #[error("virtual time requires deterministic mode")]
    VirtualTimeNeedsDeterministic,
}
