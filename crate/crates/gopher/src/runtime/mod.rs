//! The process runtime: executor, lightweight processes, completion
//! primitives and clocks.

mod clock;
mod eventual;
mod executor;
mod process;

pub use eventual::{Eventual, FlowTermination};
pub use executor::{ExecutorConfig, Gopher, ProcessId, WORKERS_ENV_VAR};
pub use process::{defer, recover, ProcessHandle};

pub(crate) use executor::RuntimeInner;
