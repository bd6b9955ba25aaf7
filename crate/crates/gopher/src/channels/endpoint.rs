//! Typed channel endpoints.
//!
//! [`Channel`] owns a settlement core; [`In`] and [`Out`] are cheap cloneable
//! handles to its read and write side. Derived endpoints (from `map`,
//! `filter`, `zip`, merged outputs) share the same two handle types, so
//! transformed endpoints flow through selectors and transputers exactly like
//! raw ones.

use std::num::NonZeroUsize;
use std::sync::Arc;

use crate::channels::core::{
    ChanCore, ChannelKind, ReadIn, ReadWaiter, WriteWaiter,
};
use crate::error::Failure;
use crate::runtime::{Eventual, FlowTermination, Gopher};

/// Read-side registration target. Implemented by the raw channel core and by
/// derived (mapped/filtered/zipped) sources.
pub(crate) trait ReadSource<A: Clone + Send + 'static>: Send + Sync {
    fn register(&self, waiter: ReadWaiter<A>);
    fn runtime(&self) -> Option<Gopher>;
    fn is_closed(&self) -> bool;
}

/// Write-side registration target: the raw core or a merged output.
pub(crate) trait WriteSink<A: Clone + Send + 'static>: Send + Sync {
    fn register(&self, waiter: WriteWaiter<A>);
    fn close(&self);
    fn runtime(&self) -> Option<Gopher>;
}

impl<A: Clone + Send + 'static> ReadSource<A> for ChanCore<A> {
    fn register(&self, waiter: ReadWaiter<A>) {
        self.register_reader(waiter);
    }

    fn runtime(&self) -> Option<Gopher> {
        ChanCore::runtime(self)
    }

    fn is_closed(&self) -> bool {
        ChanCore::is_closed(self)
    }
}

impl<A: Clone + Send + 'static> WriteSink<A> for ChanCore<A> {
    fn register(&self, waiter: WriteWaiter<A>) {
        self.register_writer(waiter);
    }

    fn close(&self) {
        ChanCore::close(self);
    }

    fn runtime(&self) -> Option<Gopher> {
        ChanCore::runtime(self)
    }
}

/// Readable endpoint of a channel (or of a derived stream).
pub struct In<A: Clone + Send + 'static> {
    pub(crate) src: Arc<dyn ReadSource<A>>,
}

impl<A: Clone + Send + 'static> Clone for In<A> {
    fn clone(&self) -> Self {
        In { src: self.src.clone() }
    }
}

/// Endpoint identity: two `In` handles are equal when they read from the
/// same underlying source (clones of one endpoint compare equal).
impl<A: Clone + Send + 'static> PartialEq for In<A> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.src, &other.src)
    }
}

impl<A: Clone + Send + 'static> Eq for In<A> {}

impl<A: Clone + Send + 'static> std::fmt::Debug for In<A> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "In({:p})", Arc::as_ptr(&self.src))
    }
}

impl<A: Clone + Send + 'static> In<A> {
    pub(crate) fn from_source(src: Arc<dyn ReadSource<A>>) -> In<A> {
        In { src }
    }

    pub(crate) fn register(&self, waiter: ReadWaiter<A>) {
        self.src.register(waiter);
    }

    pub(crate) fn runtime(&self) -> Option<Gopher> {
        self.src.runtime()
    }

    /// The next value as an eventual. Fails with [`Failure::EndOfInput`]
    /// once the channel is closed and drained.
    pub fn aread(&self) -> Eventual<A> {
        let (ft, evt) = FlowTermination::new();
        self.register(ReadWaiter::committed(Box::new(move |read_in| match read_in {
            ReadIn::Value(a) => ft.complete(a),
            ReadIn::Closed => ft.fail(Failure::EndOfInput),
            ReadIn::Failure(f) => ft.fail(f),
        })));
        evt
    }

    /// Suspending read for use inside a process body.
    pub async fn read(&self) -> Result<A, Failure> {
        self.aread().await
    }

    /// True once the underlying channel is closed (buffered values may
    /// still be readable).
    pub fn is_closed(&self) -> bool {
        self.src.is_closed()
    }
}

/// Writable endpoint of a channel (or a merged output).
pub struct Out<A: Clone + Send + 'static> {
    pub(crate) sink: Arc<dyn WriteSink<A>>,
}

impl<A: Clone + Send + 'static> Clone for Out<A> {
    fn clone(&self) -> Self {
        Out { sink: self.sink.clone() }
    }
}

/// Endpoint identity: two `Out` handles are equal when they write into the
/// same underlying sink (clones of one endpoint compare equal).
impl<A: Clone + Send + 'static> PartialEq for Out<A> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.sink, &other.sink)
    }
}

impl<A: Clone + Send + 'static> Eq for Out<A> {}

impl<A: Clone + Send + 'static> std::fmt::Debug for Out<A> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Out({:p})", Arc::as_ptr(&self.sink))
    }
}

impl<A: Clone + Send + 'static> Out<A> {
    pub(crate) fn from_sink(sink: Arc<dyn WriteSink<A>>) -> Out<A> {
        Out { sink }
    }

    pub(crate) fn register(&self, waiter: WriteWaiter<A>) {
        self.sink.register(waiter);
    }

    pub(crate) fn runtime(&self) -> Option<Gopher> {
        self.sink.runtime()
    }

    /// Writes `value`, completing when the channel accepts it: immediately
    /// for a free buffer slot, or at reader receipt for rendezvous. Fails
    /// with [`Failure::Closed`] if the channel closes first.
    pub fn awrite(&self, value: A) -> Eventual<()> {
        let (ft, evt) = FlowTermination::new();
        self.register(WriteWaiter::ready(
            value,
            Box::new(move |res| match res {
                Ok(()) => ft.complete(()),
                Err(e) => ft.fail(e),
            }),
        ));
        evt
    }

    /// Suspending write for use inside a process body.
    pub async fn write(&self, value: A) -> Result<(), Failure> {
        self.awrite(value).await
    }

    /// Closes the underlying channel (idempotent).
    pub fn close(&self) {
        self.sink.close();
    }
}

/// A typed channel: a settlement core plus its two endpoints.
pub struct Channel<A: Clone + Send + 'static> {
    core: Arc<ChanCore<A>>,
}

impl<A: Clone + Send + 'static> Clone for Channel<A> {
    fn clone(&self) -> Self {
        Channel { core: self.core.clone() }
    }
}

impl<A: Clone + Send + 'static> Channel<A> {
    pub fn kind(&self) -> ChannelKind {
        self.core.kind()
    }

    pub fn input(&self) -> In<A> {
        In { src: self.core.clone() }
    }

    pub fn output(&self) -> Out<A> {
        Out { sink: self.core.clone() }
    }

    pub fn aread(&self) -> Eventual<A> {
        self.input().aread()
    }

    pub async fn read(&self) -> Result<A, Failure> {
        self.input().read().await
    }

    pub fn awrite(&self, value: A) -> Eventual<()> {
        self.output().awrite(value)
    }

    pub async fn write(&self, value: A) -> Result<(), Failure> {
        self.output().write(value).await
    }

    pub fn close(&self) {
        self.core.close();
    }

    pub fn is_closed(&self) -> bool {
        self.core.is_closed()
    }
}

impl Gopher {
    /// Creates a channel with the given buffering discipline.
    pub fn channel<A: Clone + Send + 'static>(&self, kind: ChannelKind) -> Channel<A> {
        Channel { core: ChanCore::new(Arc::downgrade(&self.inner), kind) }
    }

    /// Capacity-0 channel: every transfer is a writer/reader rendezvous.
    pub fn rendezvous<A: Clone + Send + 'static>(&self) -> Channel<A> {
        self.channel(ChannelKind::Rendezvous)
    }

    /// Bounded channel.
    ///
    /// # Panics
    /// Panics if `capacity` is zero (use [`Gopher::rendezvous`] for
    /// capacity 0).
    pub fn buffered<A: Clone + Send + 'static>(&self, capacity: usize) -> Channel<A> {
        let capacity = NonZeroUsize::new(capacity).expect("buffered channel capacity must be ≥ 1");
        self.channel(ChannelKind::Buffered(capacity))
    }

    /// Unbounded channel: writes never block.
    pub fn growing<A: Clone + Send + 'static>(&self) -> Channel<A> {
        self.channel(ChannelKind::Growing)
    }

    /// Promise-like channel: accepts one value, then closes; reads do not
    /// consume the value, so any number of readers each receive a clone.
    pub fn one_shot<A: Clone + Send + 'static>(&self) -> Channel<A> {
        self.channel(ChannelKind::OneShot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_buffered() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        assert!(matches!(ch.awrite(42).try_take(), Some(Ok(()))));
        assert_eq!(ch.aread().try_take(), Some(Ok(42)));
    }

    #[test]
    fn queued_readers_are_fifo() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        let r1 = ch.aread();
        let r2 = ch.aread();
        ch.awrite(1);
        ch.awrite(2);
        assert_eq!(r1.try_take(), Some(Ok(1)));
        assert_eq!(r2.try_take(), Some(Ok(2)));
    }

    #[test]
    fn read_after_close_reports_end_of_input() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        ch.close();
        assert_eq!(ch.aread().try_take(), Some(Err(Failure::EndOfInput)));
    }

    #[test]
    fn write_after_close_fails() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        ch.close();
        assert_eq!(ch.awrite(1).try_take(), Some(Err(Failure::Closed)));
    }

    #[test]
    fn suspending_read_write_pair() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        let (cr, cw) = (ch.clone(), ch.clone());
        let reader = g.spawn(async move { cr.read().await });
        let writer = g.spawn(async move { cw.write(5).await });
        assert_eq!(g.block_on(reader), Ok(5));
        assert_eq!(g.block_on(writer), Ok(()));
    }

    #[test]
    fn rendezvous_blocks_writer_until_reader_arrives() {
        let g = Gopher::deterministic();
        let ch = g.rendezvous::<i32>();
        let cw = ch.clone();
        let writer = g.spawn(async move {
            cw.write(9).await?;
            Ok(9)
        });
        g.run_until_idle().unwrap();
        assert!(!writer.is_completed());
        let cr = ch.clone();
        let reader = g.spawn(async move { cr.read().await });
        assert_eq!(g.block_on(reader), Ok(9));
        assert_eq!(g.block_on(writer), Ok(9));
    }

    #[test]
    fn ten_thousand_writes_on_growing_complete_without_reads() {
        let g = Gopher::deterministic();
        let ch = g.growing::<u32>();
        for i in 0..10_000 {
            assert!(ch.awrite(i).is_completed());
        }
        for i in 0..10_000 {
            assert_eq!(ch.aread().try_take(), Some(Ok(i)));
        }
    }

    #[test]
    fn one_shot_second_write_fails() {
        let g = Gopher::deterministic();
        let ch = g.one_shot::<&'static str>();
        assert!(matches!(ch.awrite("first").try_take(), Some(Ok(()))));
        assert_eq!(ch.awrite("second").try_take(), Some(Err(Failure::Closed)));
        assert!(ch.is_closed());
        assert_eq!(ch.aread().try_take(), Some(Ok("first")));
        assert_eq!(ch.aread().try_take(), Some(Ok("first")));
    }

    #[test]
    #[should_panic(expected = "capacity must be ≥ 1")]
    fn zero_capacity_buffered_is_rejected() {
        let g = Gopher::deterministic();
        let _ = g.buffered::<i32>(0);
    }

    #[test]
    fn drain_then_end_of_input_after_close() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(2);
        ch.awrite(1);
        ch.awrite(2);
        ch.close();
        assert_eq!(ch.aread().try_take(), Some(Ok(1)));
        assert_eq!(ch.aread().try_take(), Some(Ok(2)));
        assert_eq!(ch.aread().try_take(), Some(Err(Failure::EndOfInput)));
    }

    #[test]
    fn pending_write_on_full_buffer_fails_on_close() {
        let g = Gopher::deterministic();
        let ch = g.buffered::<i32>(1);
        ch.awrite(1);
        let blocked = ch.awrite(2);
        assert!(!blocked.is_completed());
        ch.close();
        assert_eq!(blocked.try_take(), Some(Err(Failure::Closed)));
    }
}
