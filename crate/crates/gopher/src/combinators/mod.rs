//! Stream combinators over channel endpoints.
//!
//! Read-side combinators ([`In::map`], [`In::filter`], [`In::zip`],
//! [`In::fold`], [`In::dup`]) derive new readable endpoints; write sides
//! merge with [`Out::merge`] into a [`MergedOutput`]. Collection-style
//! asynchronous helpers ([`Gopher::map_async_seq`],
//! [`Gopher::fold_async_seq`]) run a suspending function over a finite
//! sequence, strictly one element at a time.
//!
//! Derived read endpoints are demand-driven: nothing is pulled from the
//! source until a reader registers downstream. The one exception is
//! [`In::dup`], whose two sides buffer independently and therefore pump the
//! source eagerly.

mod merged;
mod stream;

use std::sync::Arc;

use crate::channels::{ChanCore, ChannelKind, In, Out, WriteWaiter};
use crate::error::Failure;
use crate::runtime::{Eventual, Gopher};

pub use merged::MergedOutput;

pub(crate) use stream::orphaned_in;
use stream::{FilteredSource, MappedSource, ZipSource};

impl<A: Clone + Send + 'static> In<A> {
    /// Endpoint delivering `f(a)` for every source value `a`. Close and
    /// failure propagate; a panicking `f` is delivered to the reader as a
    /// failure. `f` must be pure — with downstream gating (filters,
    /// selectors) it can be evaluated more than once per value.
    pub fn map<B, F>(&self, f: F) -> In<B>
    where
        B: Clone + Send + 'static,
        F: Fn(A) -> B + Send + Sync + 'static,
    {
        In::from_source(Arc::new(MappedSource { inner: self.src.clone(), f: Arc::new(f) }))
    }

    /// Endpoint delivering only values satisfying `p`; rejected values are
    /// consumed from the source and dropped. A panicking `p` is delivered
    /// to the reader as a failure.
    pub fn filter<P>(&self, p: P) -> In<A>
    where
        P: Fn(&A) -> bool + Send + Sync + 'static,
    {
        In::from_source(Arc::new(FilteredSource { inner: self.src.clone(), p: Arc::new(p) }))
    }

    /// Endpoint of pairs `(k-th of self, k-th of other)`. Ends when either
    /// side ends, discarding at most one unpaired value; upstream failures
    /// propagate to the pair reader. Values are pulled on demand.
    pub fn zip<B: Clone + Send + 'static>(&self, other: &In<B>) -> In<(A, B)> {
        match self.runtime().or_else(|| other.runtime()) {
            Some(g) => In::from_source(Arc::new(ZipSource::new(&g, self.clone(), other.clone()))),
            None => orphaned_in(),
        }
    }

    /// Left-folds every value until end of input, completing with the final
    /// state. A failing source or a panicking `step` fails the result.
    pub fn fold<S, F>(&self, z: S, mut step: F) -> Eventual<S>
    where
        S: Send + 'static,
        F: FnMut(S, A) -> S + Send + 'static,
    {
        let Some(g) = self.runtime() else {
            return Eventual::failed(Failure::Shutdown);
        };
        let src = self.clone();
        g.spawn(async move {
            let mut acc = z;
            loop {
                match src.read().await {
                    Ok(v) => acc = step(acc, v),
                    Err(Failure::EndOfInput) => return Ok(acc),
                    Err(e) => return Err(e),
                }
            }
        })
        .into()
    }

    /// Splits into two endpoints, each delivering every source value.
    /// Both sides buffer independently (growing), so a slow or absent
    /// reader on one side never stalls the other; close propagates to both.
    pub fn dup(&self) -> (In<A>, In<A>) {
        let Some(g) = self.runtime() else {
            return (orphaned_in(), orphaned_in());
        };
        let left = ChanCore::<A>::new(Arc::downgrade(&g.inner), ChannelKind::Growing);
        let right = ChanCore::<A>::new(Arc::downgrade(&g.inner), ChannelKind::Growing);
        let src = self.clone();
        let (l, r) = (left.clone(), right.clone());
        g.spawn(async move {
            loop {
                match src.read().await {
                    Ok(v) => {
                        l.register_writer(WriteWaiter::ready(v.clone(), Box::new(|_| {})));
                        r.register_writer(WriteWaiter::ready(v, Box::new(|_| {})));
                    }
                    Err(Failure::EndOfInput) => {
                        l.close();
                        r.close();
                        return Ok(());
                    }
                    Err(e) => {
                        l.poison(e.clone());
                        r.poison(e);
                        return Ok(());
                    }
                }
            }
        });
        (In::from_source(left), In::from_source(right))
    }
}

impl<A: Clone + Send + 'static> Out<A> {
    /// Merges with another writable endpoint: each write to the result goes
    /// to whichever endpoint accepts first (ties alternate). See
    /// [`MergedOutput`].
    pub fn merge(self, other: Out<A>) -> MergedOutput<A> {
        MergedOutput::new(self, other)
    }
}

impl Gopher {
    /// Applies the suspending function `g` to each element in order,
    /// starting element `k+1` only after result `k` completes. Completes
    /// with the results in input order; the first failure aborts.
    pub fn map_async_seq<A, B, F>(&self, xs: Vec<A>, mut g: F) -> Eventual<Vec<B>>
    where
        A: Send + 'static,
        B: Send + 'static,
        F: FnMut(A) -> Eventual<B> + Send + 'static,
    {
        self.spawn(async move {
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                out.push(g(x).await?);
            }
            Ok(out)
        })
        .into()
    }

    /// Sequential asynchronous left fold over a finite sequence: each step
    /// may suspend, and step `k+1` starts only after step `k` completes.
    pub fn fold_async_seq<A, S, F>(&self, xs: Vec<A>, z: S, mut step: F) -> Eventual<S>
    where
        A: Send + 'static,
        S: Send + 'static,
        F: FnMut(S, A) -> Eventual<S> + Send + 'static,
    {
        self.spawn(async move {
            let mut acc = z;
            for x in xs {
                acc = step(acc, x).await?;
            }
            Ok(acc)
        })
        .into()
    }
}
