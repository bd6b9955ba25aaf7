//! Channels: typed rendezvous points between lightweight processes.
//!
//! A channel couples a write side ([`Out`]) to a read side ([`In`]).
//! Four kinds cover the synchronization spectrum:
//!
//! - [`ChannelKind::Rendezvous`] — unbuffered; a write completes only when
//!   a read consumes the value (and vice versa).
//! - [`ChannelKind::Buffered`] — a fixed-capacity queue; writes complete
//!   while a slot is free, reads while a value is queued.
//! - [`ChannelKind::Growing`] — an unbounded queue; writes always complete
//!   immediately.
//! - [`ChannelKind::OneShot`] — the first write both delivers and closes;
//!   every reader (present and future) observes that single value.
//!
//! All waiting is expressed as registered callbacks, so a blocked read or
//! write suspends a lightweight process without pinning an OS thread. The
//! lowest layer is the decision protocol ([`In::cbread`] / [`Out::cbwrite`]),
//! on which one-value reads/writes ([`In::aread`], [`Out::awrite`]) and
//! suspending `async` reads/writes ([`In::read`], [`Out::write`]) are built.

mod cont;
mod core;
mod endpoint;

pub use cont::{ContRead, ContWrite, Continuated, PendingRead, PendingWrite, ReadConsumer, Skip};
pub use core::{ChannelKind, ReadIn};
pub use endpoint::{Channel, In, Out};

pub(crate) use core::{
    Arbiter, ChanCore, Consumer, Gate, ReadWaiter, ReadWaiterKind, WriteDone, WriteWaiter,
    WriteWaiterKind,
};
pub(crate) use endpoint::{ReadSource, WriteSink};
