//! Go-flavoured CSP concurrency for Rust: channels, selectors and
//! transputers running on lightweight processes.
//!
//! The building blocks:
//!
//! * [`Gopher`] — the executor handle. Multi-worker by default; a
//!   deterministic single-worker mode (optionally with a virtual clock)
//!   replays the same schedule on every run.
//! * [`runtime::ProcessHandle`] / [`Gopher::spawn`] — lightweight processes
//!   with Go-style [`defer`]/[`recover`] cleanup.
//! * Channels — typed rendezvous, bounded, unbounded and one-shot queues
//!   whose read and write sides suspend processes instead of threads.
//! * Selectors — race reads, writes and timeouts across channels with fair
//!   arbitration, as a one-shot choice, a loop, or a stateful fold.
//! * Transputers — named, restartable processes wired together from typed
//!   ports, composable and replicable with supervision policies.

pub mod channels;
pub mod combinators;
pub mod demos;
pub mod error;
pub mod runtime;
pub mod select;
pub mod transputer;

pub use channels::{Channel, ChannelKind, In, Out, ReadIn};
pub use combinators::MergedOutput;
pub use select::{exit, proceed, SelectBuilder, Verdict};
pub use transputer::{
    PortPolicies, Ports, RecoveryDecision, ReplicatedTransputer, RunningReplica,
    RunningTransputer, Supervisor, Transputer, TransputerBuilder, TransputerDef,
};
pub use error::{ConfigError, DefinitionError, Failure};
pub use runtime::{
    defer, recover, Eventual, ExecutorConfig, FlowTermination, Gopher, ProcessHandle, ProcessId,
    WORKERS_ENV_VAR,
};
