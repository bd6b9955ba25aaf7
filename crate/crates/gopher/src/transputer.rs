//! Actor-like processing nodes built on selectors.
//!
//! A **transputer** is a named node with typed, named ports. Its behaviour is
//! a select loop: one branch per port it reacts to, threading an internal
//! state value from round to round. The definition is split in three phases:
//!
//! 1. [`Transputer::define`] names the node and declares ports
//!    ([`TransputerDef::in_port`] / [`TransputerDef::out_port`]);
//! 2. [`TransputerDef::with_state`] (or [`TransputerDef::stateless`]) fixes
//!    the internal state and lets loop branches be attached
//!    ([`TransputerBuilder::on_read`], [`on_write`](TransputerBuilder::on_write),
//!    [`on_timeout`](TransputerBuilder::on_timeout));
//! 3. [`TransputerBuilder::build`] validates the definition.
//!
//! Ports are bound to channels with [`Transputer::bind_in`] /
//! [`Transputer::bind_out`] and must all be bound before
//! [`Transputer::start`]. Starting consumes the definition handle, so a given
//! definition cannot be started twice (clones share port bindings and may be
//! started independently, which is deliberate: that is manual replication).
//!
//! # Failure handling
//!
//! When the loop fails, the node's recovery function maps the failure to a
//! [`RecoveryDecision`]:
//!
//! * `Restart` replaces the loop with a fresh one: internal state is rebuilt
//!   from the state factory, port bindings (and any values buffered in the
//!   port channels) are kept, and the restart counter increments. Once the
//!   restart limit (default 10) is exhausted, the node stops with the
//!   triggering failure. **The value being processed when the body failed has
//!   already been consumed from its channel and is lost** — restarts do not
//!   replay it.
//! * `Escalate` consults the supervisor callback; without a supervisor (or
//!   if the supervisor itself escalates) it degrades to `Stop`. The default
//!   recovery for every node is `Escalate`, so an unsupervised node simply
//!   fails its handle.
//! * `Stop` completes the node's handle with the failure.
//!
//! End of input is not a fault: when every armed read branch finds its
//! channel closed, the loop ends and the handle completes with
//! [`Failure::EndOfInput`] without consulting recovery (restarting would just
//! hit the same closed channels).
//!
//! # Composition and replication
//!
//! [`Transputer::compose`] runs two nodes in parallel as one: starting the
//! composite starts both, and the composite completes when both children
//! have. A child failure (one that escaped the child's own recovery) triggers
//! the *composite's* recovery: `Restart` restarts just the failed child,
//! `Escalate` notifies the composite's supervisor, `Stop` fails the composite
//! handle immediately. There is no way to interrupt a running loop, so a
//! sibling keeps running after the composite handle has failed; it winds down
//! when its own channels close.
//!
//! [`Transputer::replicate`] starts `n` instances from a factory and wires
//! each port by policy: `Share` points every instance at the same channel
//! (work sharing for in-ports, a common sink for out-ports); `Distribute(k)`
//! routes message `m` to instance `k(m) mod n`; `Duplicate` copies every
//! message to all instances in per-instance FIFO order. The routed policies
//! interpose a forwarder process reading the public channel into per-instance
//! growing channels, so the public channel keeps ordinary channel semantics.
//! Out-ports support only `Share`.

use std::any::{Any, TypeId};
use std::collections::{HashMap, HashSet};
use std::future::Future;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::channels::{ChanCore, ChannelKind, In, Out, WriteWaiter};
use crate::combinators::orphaned_in;
use crate::error::{DefinitionError, Failure};
use crate::runtime::{Eventual, FlowTermination, Gopher};
use crate::select::{SelectBuilder, Verdict};

/// What to do about a loop failure: decided by a node's recovery function or
/// its supervisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryDecision {
    /// Replace the loop with a fresh one (state reset, bindings kept).
    Restart,
    /// Hand the failure to the supervisor; degrades to [`Stop`](Self::Stop)
    /// when there is none.
    Escalate,
    /// Complete the node's handle with the failure.
    Stop,
}

/// A supervisor callback: given the failing node's name and the failure,
/// directs the recovery. May be invoked from any worker thread.
pub type Supervisor = Arc<dyn Fn(&str, &Failure) -> RecoveryDecision + Send + Sync>;

type RecoveryFn = Arc<dyn Fn(&Failure) -> RecoveryDecision + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PortDir {
    In,
    Out,
}

struct PortEntry {
    dir: PortDir,
    type_id: TypeId,
    type_name: &'static str,
    /// A boxed `In<A>` or `Out<A>`, present once the port is bound.
    binding: Option<Box<dyn Any + Send + Sync>>,
}

type PortTable = Arc<Mutex<HashMap<String, PortEntry>>>;

/// Resolves a node's port names to typed endpoints inside loop bodies.
///
/// Handed to every branch body; resolution reflects the current bindings,
/// which persist across restarts.
#[derive(Clone)]
pub struct Ports {
    owner: Arc<str>,
    table: PortTable,
}

impl Ports {
    fn resolve<T: Clone + 'static>(&self, port: &str, dir: PortDir) -> Result<T, Failure> {
        let table = self.table.lock().unwrap();
        let entry = table.get(port).ok_or_else(|| {
            Failure::usage(format!("transputer {:?} has no port named {port:?}", self.owner))
        })?;
        if entry.dir != dir {
            let want = if dir == PortDir::In { "readable" } else { "writable" };
            return Err(Failure::usage(format!(
                "port {port:?} of transputer {:?} is not {want}",
                self.owner
            )));
        }
        let binding = entry.binding.as_ref().ok_or_else(|| {
            Failure::usage(format!(
                "port {port:?} of transputer {:?} is not bound to a channel",
                self.owner
            ))
        })?;
        binding.downcast_ref::<T>().cloned().ok_or_else(|| {
            Failure::usage(format!(
                "port {port:?} of transputer {:?} carries {} elements",
                self.owner, entry.type_name
            ))
        })
    }

    /// The readable endpoint bound to in-port `port`.
    pub fn reader<A: Clone + Send + 'static>(&self, port: &str) -> Result<In<A>, Failure> {
        self.resolve::<In<A>>(port, PortDir::In)
    }

    /// The writable endpoint bound to out-port `port`.
    pub fn writer<A: Clone + Send + 'static>(&self, port: &str) -> Result<Out<A>, Failure> {
        self.resolve::<Out<A>>(port, PortDir::Out)
    }
}

struct PortDecl {
    name: String,
    dir: PortDir,
    type_id: TypeId,
    type_name: &'static str,
}

/// Phase one of a definition: name and port declarations.
pub struct TransputerDef {
    name: String,
    decls: Vec<PortDecl>,
}

impl TransputerDef {
    /// Declares an in-port carrying `A` values.
    pub fn in_port<A: Clone + Send + 'static>(mut self, name: &str) -> Self {
        self.decls.push(PortDecl {
            name: name.to_string(),
            dir: PortDir::In,
            type_id: TypeId::of::<In<A>>(),
            type_name: std::any::type_name::<A>(),
        });
        self
    }

    /// Declares an out-port carrying `A` values.
    pub fn out_port<A: Clone + Send + 'static>(mut self, name: &str) -> Self {
        self.decls.push(PortDecl {
            name: name.to_string(),
            dir: PortDir::Out,
            type_id: TypeId::of::<Out<A>>(),
            type_name: std::any::type_name::<A>(),
        });
        self
    }

    /// Fixes the internal state: `init` builds a fresh value for the first
    /// loop and again after every restart.
    pub fn with_state<S: Send + 'static>(
        self,
        init: impl Fn() -> S + Send + Sync + 'static,
    ) -> TransputerBuilder<S> {
        TransputerBuilder {
            def: self,
            init: Arc::new(init),
            arms: Vec::new(),
            recovery: Arc::new(|_| RecoveryDecision::Escalate),
            supervisor: None,
            restart_limit: 10,
        }
    }

    /// A node whose branches keep no select-level state.
    pub fn stateless(self) -> TransputerBuilder<()> {
        self.with_state(|| ())
    }
}

/// One loop branch, erased over its element type: resolves its port and arms
/// itself on a selector round.
type Arm<S> =
    Box<dyn Fn(&Ports, SelectBuilder<S, ()>) -> Result<SelectBuilder<S, ()>, Failure> + Send + Sync>;

/// Builds one selector loop instance; invoked at start and after every
/// restart, so everything it creates is per-life.
type LoopStarter = Arc<dyn Fn(&Gopher, &Ports) -> Result<Eventual<()>, Failure> + Send + Sync>;

/// Phase two of a definition: loop branches and recovery policy over a fixed
/// internal state type `S`.
pub struct TransputerBuilder<S: Send + 'static> {
    def: TransputerDef,
    init: Arc<dyn Fn() -> S + Send + Sync>,
    arms: Vec<Arm<S>>,
    recovery: RecoveryFn,
    supervisor: Option<Supervisor>,
    restart_limit: usize,
}

impl<S: Send + 'static> TransputerBuilder<S> {
    /// Adds a read branch on in-port `port`. When it wins a select round the
    /// body runs with the ports handle, the value read and the current state.
    pub fn on_read<A, F, Fut>(mut self, port: &str, body: F) -> Self
    where
        A: Clone + Send + 'static,
        F: Fn(Ports, A, S) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = Verdict<S, ()>> + Send + 'static,
    {
        let port = port.to_string();
        let body = Arc::new(body);
        self.arms.push(Box::new(move |ports, sel| {
            let ch = ports.reader::<A>(&port)?;
            let ports = ports.clone();
            let body = body.clone();
            Ok(sel.on_read(&ch, move |a: A, s: S| body(ports.clone(), a, s)))
        }));
        self
    }

    /// Adds a write branch on out-port `port`: `produce` computes the value
    /// from the current state when the channel accepts it, then the body runs.
    pub fn on_write<A, P, F, Fut>(mut self, port: &str, produce: P, body: F) -> Self
    where
        A: Clone + Send + 'static,
        P: Fn(&S) -> A + Send + Sync + 'static,
        F: Fn(Ports, S) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = Verdict<S, ()>> + Send + 'static,
    {
        let port = port.to_string();
        let produce = Arc::new(produce);
        let body = Arc::new(body);
        self.arms.push(Box::new(move |ports, sel| {
            let ch = ports.writer::<A>(&port)?;
            let ports = ports.clone();
            let produce = produce.clone();
            let body = body.clone();
            Ok(sel.on_write(&ch, move |s: &S| produce(s), move |s: S| body(ports.clone(), s)))
        }));
        self
    }

    /// Adds the loop's timeout branch: fires when no port branch settles
    /// within `delay` of a round starting. At most one per node.
    pub fn on_timeout<F, Fut>(mut self, delay: Duration, body: F) -> Self
    where
        F: Fn(Ports, S) -> Fut + Send + Sync + 'static,
        Fut: Future<Output = Verdict<S, ()>> + Send + 'static,
    {
        let body = Arc::new(body);
        self.arms.push(Box::new(move |ports, sel| {
            let ports = ports.clone();
            let body = body.clone();
            Ok(sel.with_timeout(delay, move |s: S| body(ports.clone(), s)))
        }));
        self
    }

    /// Sets the recovery function consulted when the loop fails.
    pub fn recovery(
        mut self,
        f: impl Fn(&Failure) -> RecoveryDecision + Send + Sync + 'static,
    ) -> Self {
        self.recovery = Arc::new(f);
        self
    }

    /// Sets the supervisor consulted on [`RecoveryDecision::Escalate`].
    pub fn supervisor(
        mut self,
        f: impl Fn(&str, &Failure) -> RecoveryDecision + Send + Sync + 'static,
    ) -> Self {
        self.supervisor = Some(Arc::new(f));
        self
    }

    /// Caps how many restarts the node may perform (default 10).
    pub fn restart_limit(mut self, limit: usize) -> Self {
        self.restart_limit = limit;
        self
    }

    /// Validates the definition: port names must be unique and at least one
    /// loop branch must be declared.
    pub fn build(self) -> Result<Transputer, DefinitionError> {
        let mut seen = HashSet::new();
        for decl in &self.def.decls {
            if !seen.insert(decl.name.clone()) {
                return Err(DefinitionError::DuplicatePort(decl.name.clone()));
            }
        }
        if self.arms.is_empty() {
            return Err(DefinitionError::NoBranches(self.def.name));
        }
        let table: HashMap<String, PortEntry> = self
            .def
            .decls
            .into_iter()
            .map(|d| {
                (
                    d.name,
                    PortEntry {
                        dir: d.dir,
                        type_id: d.type_id,
                        type_name: d.type_name,
                        binding: None,
                    },
                )
            })
            .collect();
        let starter = make_starter(self.init, self.arms);
        Ok(Transputer {
            node: Node::Leaf(Leaf {
                name: Arc::from(self.def.name),
                table: Arc::new(Mutex::new(table)),
                starter,
                recovery: self.recovery,
                supervisor: self.supervisor,
                restart_limit: self.restart_limit,
            }),
        })
    }
}

fn make_starter<S: Send + 'static>(
    init: Arc<dyn Fn() -> S + Send + Sync>,
    arms: Vec<Arm<S>>,
) -> LoopStarter {
    let arms = Arc::new(arms);
    Arc::new(move |g, ports| {
        let initial = catch_unwind(AssertUnwindSafe(|| init())).map_err(Failure::from_panic)?;
        let mut sel = g.select::<S, ()>();
        for arm in arms.iter() {
            sel = arm(ports, sel)?;
        }
        Ok(sel.fold(initial))
    })
}

#[derive(Clone)]
struct Leaf {
    name: Arc<str>,
    table: PortTable,
    starter: LoopStarter,
    recovery: RecoveryFn,
    supervisor: Option<Supervisor>,
    restart_limit: usize,
}

impl Leaf {
    fn bind(
        &self,
        port: &str,
        dir: PortDir,
        type_id: TypeId,
        binding: Box<dyn Any + Send + Sync>,
    ) -> Result<(), DefinitionError> {
        let mut table = self.table.lock().unwrap();
        let entry = table
            .get_mut(port)
            .ok_or_else(|| DefinitionError::NoSuchPort(port.to_string()))?;
        if entry.dir != dir || entry.type_id != type_id {
            return Err(DefinitionError::NoSuchPort(port.to_string()));
        }
        entry.binding = Some(binding);
        Ok(())
    }
}

#[derive(Clone)]
struct Composite {
    name: Arc<str>,
    children: Vec<Transputer>,
    recovery: RecoveryFn,
    supervisor: Option<Supervisor>,
    restart_limit: usize,
}

#[derive(Clone)]
enum Node {
    Leaf(Leaf),
    Composite(Composite),
}

impl Node {
    fn name(&self) -> &Arc<str> {
        match self {
            Node::Leaf(l) => &l.name,
            Node::Composite(c) => &c.name,
        }
    }

    fn validate(&self) -> Result<(), DefinitionError> {
        match self {
            Node::Leaf(l) => {
                let table = l.table.lock().unwrap();
                for (port, entry) in table.iter() {
                    if entry.binding.is_none() {
                        return Err(DefinitionError::UnboundPort(format!("{}.{}", l.name, port)));
                    }
                }
                Ok(())
            }
            Node::Composite(c) => c.children.iter().try_for_each(|t| t.node.validate()),
        }
    }
}

/// A defined (but not yet running) processing node: a leaf select loop or a
/// parallel composition of nodes.
///
/// Cloning is cheap and clones share port bindings — binding a port on one
/// clone binds it on all.
#[derive(Clone)]
pub struct Transputer {
    node: Node,
}

impl std::fmt::Debug for Transputer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.node {
            Node::Leaf(_) => "leaf",
            Node::Composite(_) => "composite",
        };
        write!(f, "Transputer({:?}, {kind})", self.name())
    }
}

impl Transputer {
    /// Starts a definition: name the node, then declare its ports.
    pub fn define(name: impl Into<String>) -> TransputerDef {
        TransputerDef { name: name.into(), decls: Vec::new() }
    }

    /// The node's name (composites are named `"(a+b)"`).
    pub fn name(&self) -> &str {
        self.node.name()
    }

    /// Binds in-port `port` to a readable endpoint.
    pub fn bind_in<A: Clone + Send + 'static>(
        &self,
        port: &str,
        source: In<A>,
    ) -> Result<(), DefinitionError> {
        match &self.node {
            Node::Leaf(l) => l.bind(port, PortDir::In, TypeId::of::<In<A>>(), Box::new(source)),
            Node::Composite(_) => Err(DefinitionError::NoSuchPort(port.to_string())),
        }
    }

    /// Binds out-port `port` to a writable endpoint.
    pub fn bind_out<A: Clone + Send + 'static>(
        &self,
        port: &str,
        sink: Out<A>,
    ) -> Result<(), DefinitionError> {
        match &self.node {
            Node::Leaf(l) => l.bind(port, PortDir::Out, TypeId::of::<Out<A>>(), Box::new(sink)),
            Node::Composite(_) => Err(DefinitionError::NoSuchPort(port.to_string())),
        }
    }

    /// Runs `self` and `other` in parallel as one node. The composite
    /// completes when both children have; a failure that escapes a child's
    /// own recovery triggers the composite's recovery (default `Escalate`),
    /// where `Restart` restarts just the failed child.
    pub fn compose(self, other: Transputer) -> Transputer {
        let name: Arc<str> = Arc::from(format!("({}+{})", self.name(), other.name()));
        Transputer {
            node: Node::Composite(Composite {
                name,
                children: vec![self, other],
                recovery: Arc::new(|_| RecoveryDecision::Escalate),
                supervisor: None,
                restart_limit: 10,
            }),
        }
    }

    /// Replaces the recovery function (useful on composites, whose default
    /// is `Escalate`).
    pub fn with_recovery(
        mut self,
        f: impl Fn(&Failure) -> RecoveryDecision + Send + Sync + 'static,
    ) -> Transputer {
        match &mut self.node {
            Node::Leaf(l) => l.recovery = Arc::new(f),
            Node::Composite(c) => c.recovery = Arc::new(f),
        }
        self
    }

    /// Attaches a supervisor consulted on `Escalate`.
    pub fn with_supervisor(
        mut self,
        f: impl Fn(&str, &Failure) -> RecoveryDecision + Send + Sync + 'static,
    ) -> Transputer {
        let sup: Supervisor = Arc::new(f);
        match &mut self.node {
            Node::Leaf(l) => l.supervisor = Some(sup),
            Node::Composite(c) => c.supervisor = Some(sup),
        }
        self
    }

    /// Caps how many restarts this node may perform (default 10).
    pub fn with_restart_limit(mut self, limit: usize) -> Transputer {
        match &mut self.node {
            Node::Leaf(l) => l.restart_limit = limit,
            Node::Composite(c) => c.restart_limit = limit,
        }
        self
    }

    /// Starts the node on `g`. Fails if any port is unbound. The returned
    /// handle exposes the completion and the restart counter; the definition
    /// is consumed, so a node cannot be started twice.
    pub fn start(self, g: &Gopher) -> Result<RunningTransputer, DefinitionError> {
        self.node.validate()?;
        let name = self.node.name().clone();
        let restarts = Arc::new(AtomicUsize::new(0));
        let completion = run_node(self.node, g, restarts.clone());
        Ok(RunningTransputer { name, restarts, completion: Some(completion) })
    }

    /// Builds `n` instances with `factory` and wires their ports according
    /// to `policies` (ports without an entry default to `Share`). Binding and
    /// starting happen through the returned [`ReplicatedTransputer`].
    pub fn replicate(
        n: usize,
        policies: PortPolicies,
        factory: impl Fn(usize) -> Result<Transputer, DefinitionError>,
    ) -> Result<ReplicatedTransputer, DefinitionError> {
        if n == 0 {
            return Err(DefinitionError::ZeroReplicas);
        }
        let instances: Vec<Transputer> = (0..n).map(factory).collect::<Result<_, _>>()?;
        for (port, policy) in &policies.map {
            match instances[0].port_dir(port) {
                None => return Err(DefinitionError::NoSuchPort(port.clone())),
                Some(PortDir::Out) if !matches!(policy, PolicyKind::Share) => {
                    return Err(DefinitionError::NonShareOutPort(port.clone()))
                }
                Some(_) => {}
            }
        }
        Ok(ReplicatedTransputer { instances, policies })
    }

    fn port_dir(&self, port: &str) -> Option<PortDir> {
        match &self.node {
            Node::Leaf(l) => l.table.lock().unwrap().get(port).map(|e| e.dir),
            Node::Composite(_) => None,
        }
    }
}

/// Maps a loop failure to a decision, resolving `Escalate` through the
/// supervisor (or to `Stop` without one). A panicking recovery function or
/// supervisor counts as `Stop`.
fn decide(
    recovery: &RecoveryFn,
    supervisor: &Option<Supervisor>,
    name: &str,
    failure: &Failure,
) -> RecoveryDecision {
    let decision = catch_unwind(AssertUnwindSafe(|| recovery(failure)))
        .unwrap_or(RecoveryDecision::Stop);
    match decision {
        RecoveryDecision::Escalate => match supervisor {
            Some(sup) => match catch_unwind(AssertUnwindSafe(|| sup(name, failure)))
                .unwrap_or(RecoveryDecision::Stop)
            {
                RecoveryDecision::Escalate => RecoveryDecision::Stop,
                directed => directed,
            },
            None => RecoveryDecision::Stop,
        },
        other => other,
    }
}

fn run_node(node: Node, g: &Gopher, restarts: Arc<AtomicUsize>) -> Eventual<()> {
    match node {
        Node::Leaf(leaf) => run_leaf(leaf, g, restarts),
        Node::Composite(composite) => run_composite(composite, g, restarts),
    }
}

/// The per-leaf supervision loop: run a loop instance, and on failure either
/// finish the handle or perform a supervised restart (state reset, bindings
/// kept, counter incremented) until the restart limit is exhausted.
fn run_leaf(leaf: Leaf, g: &Gopher, restarts: Arc<AtomicUsize>) -> Eventual<()> {
    let (ft, completion) = FlowTermination::new();
    let ports = Ports { owner: leaf.name.clone(), table: leaf.table.clone() };
    let g2 = g.clone();
    g.spawn(async move {
        loop {
            let life = match (leaf.starter)(&g2, &ports) {
                Ok(ev) => ev,
                Err(f) => Eventual::failed(f),
            };
            match life.await {
                Ok(()) => {
                    ft.complete(());
                    return Ok(());
                }
                // End of input is orderly shutdown, not a fault: restarting
                // would only re-arm the same closed channels.
                Err(Failure::EndOfInput) => {
                    ft.fail(Failure::EndOfInput);
                    return Ok(());
                }
                Err(f) => match decide(&leaf.recovery, &leaf.supervisor, &leaf.name, &f) {
                    RecoveryDecision::Restart
                        if restarts.load(Ordering::SeqCst) < leaf.restart_limit =>
                    {
                        restarts.fetch_add(1, Ordering::SeqCst);
                    }
                    _ => {
                        ft.fail(f);
                        return Ok(());
                    }
                },
            }
        }
    });
    completion
}

/// Starts every child and aggregates their completions. One watcher process
/// per child applies the composite's recovery to failures that escaped the
/// child; `Restart` restarts only that child (one-for-one), drawing on the
/// composite-wide restart budget.
fn run_composite(composite: Composite, g: &Gopher, restarts: Arc<AtomicUsize>) -> Eventual<()> {
    let (ft, completion) = FlowTermination::new();
    let remaining = Arc::new(AtomicUsize::new(composite.children.len()));
    let first_failure: Arc<Mutex<Option<Failure>>> = Arc::new(Mutex::new(None));
    for child in composite.children {
        let first_life = run_node(child.node.clone(), g, Arc::new(AtomicUsize::new(0)));
        let ft = ft.clone();
        let remaining = remaining.clone();
        let first_failure = first_failure.clone();
        let recovery = composite.recovery.clone();
        let supervisor = composite.supervisor.clone();
        let limit = composite.restart_limit;
        let budget = restarts.clone();
        let g2 = g.clone();
        g.spawn(async move {
            let mut life = first_life;
            let terminal: Result<(), Failure> = loop {
                match life.await {
                    Ok(()) => break Ok(()),
                    Err(Failure::EndOfInput) => break Err(Failure::EndOfInput),
                    Err(f) => match decide(&recovery, &supervisor, child.name(), &f) {
                        RecoveryDecision::Restart if budget.load(Ordering::SeqCst) < limit => {
                            budget.fetch_add(1, Ordering::SeqCst);
                            life = run_node(child.node.clone(), &g2, Arc::new(AtomicUsize::new(0)));
                        }
                        _ => {
                            ft.fail(f);
                            return Ok(());
                        }
                    },
                }
            };
            if let Err(f) = terminal {
                first_failure.lock().unwrap().get_or_insert(f);
            }
            if remaining.fetch_sub(1, Ordering::SeqCst) == 1 {
                match first_failure.lock().unwrap().take() {
                    Some(f) => ft.fail(f),
                    None => ft.complete(()),
                }
            }
            Ok(())
        });
    }
    completion
}

/// Handle to a started node.
pub struct RunningTransputer {
    name: Arc<str>,
    restarts: Arc<AtomicUsize>,
    completion: Option<Eventual<()>>,
}

impl std::fmt::Debug for RunningTransputer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunningTransputer")
            .field("name", &self.name)
            .field("restarts", &self.restart_count())
            .finish()
    }
}

impl RunningTransputer {
    /// The node's name.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// How many supervised restarts this node has performed so far.
    pub fn restart_count(&self) -> usize {
        self.restarts.load(Ordering::SeqCst)
    }

    /// The node's completion: `Ok` when a branch body exited the loop,
    /// `Err(EndOfInput)` after orderly input shutdown, any other failure when
    /// the node stopped on it. Single-consumer, like every [`Eventual`].
    pub fn completion(&mut self) -> Eventual<()> {
        self.completion.take().expect("transputer completion was already consumed")
    }
}

enum PolicyKind {
    Share,
    /// Holds an `Arc<dyn Fn(&A) -> usize + Send + Sync>` for the port's
    /// element type; recovered by downcast when the port is bound.
    Distribute(Box<dyn Any + Send + Sync>),
    Duplicate,
}

/// Per-port connection policies for [`Transputer::replicate`]. Ports without
/// an entry use `Share`.
#[derive(Default)]
pub struct PortPolicies {
    map: HashMap<String, PolicyKind>,
}

impl PortPolicies {
    pub fn new() -> PortPolicies {
        PortPolicies::default()
    }

    /// All instances use the bound channel directly: in-ports compete for
    /// messages (work sharing), out-ports write to the one sink.
    pub fn share(mut self, port: &str) -> Self {
        self.map.insert(port.to_string(), PolicyKind::Share);
        self
    }

    /// Routes each message `m` on this in-port to instance `key(&m) mod n`.
    /// The key must be total; a panicking key poisons the instance channels.
    pub fn distribute<A: Clone + Send + 'static>(
        mut self,
        port: &str,
        key: impl Fn(&A) -> usize + Send + Sync + 'static,
    ) -> Self {
        let key: Arc<dyn Fn(&A) -> usize + Send + Sync> = Arc::new(key);
        self.map.insert(port.to_string(), PolicyKind::Distribute(Box::new(key)));
        self
    }

    /// Copies every message on this in-port to all instances, preserving
    /// per-instance FIFO order.
    pub fn duplicate(mut self, port: &str) -> Self {
        self.map.insert(port.to_string(), PolicyKind::Duplicate);
        self
    }
}

enum Router<A> {
    Duplicate,
    Distribute(Arc<dyn Fn(&A) -> usize + Send + Sync>),
}

/// `n` instances of a prototype wired per-port by policy. Bind the public
/// ports here, then [`start`](Self::start).
pub struct ReplicatedTransputer {
    instances: Vec<Transputer>,
    policies: PortPolicies,
}

impl std::fmt::Debug for ReplicatedTransputer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ReplicatedTransputer(n={})", self.instances.len())
    }
}

impl ReplicatedTransputer {
    /// How many instances the group holds.
    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// Binds the group's in-port `port` to `source`, wiring per the port's
    /// policy. For `Distribute` the element type must match the key's.
    pub fn bind_in<A: Clone + Send + 'static>(
        &self,
        port: &str,
        source: In<A>,
    ) -> Result<(), DefinitionError> {
        match self.policies.map.get(port) {
            None | Some(PolicyKind::Share) => {
                for t in &self.instances {
                    t.bind_in(port, source.clone())?;
                }
                Ok(())
            }
            Some(PolicyKind::Duplicate) => self.route(port, source, Router::Duplicate),
            Some(PolicyKind::Distribute(key)) => {
                let key = key
                    .downcast_ref::<Arc<dyn Fn(&A) -> usize + Send + Sync>>()
                    .ok_or_else(|| DefinitionError::NoSuchPort(port.to_string()))?
                    .clone();
                self.route(port, source, Router::Distribute(key))
            }
        }
    }

    /// Binds the group's out-port `port` to `sink` on every instance
    /// (out-ports always share; other policies were rejected at replication).
    pub fn bind_out<A: Clone + Send + 'static>(
        &self,
        port: &str,
        sink: Out<A>,
    ) -> Result<(), DefinitionError> {
        for t in &self.instances {
            t.bind_out(port, sink.clone())?;
        }
        Ok(())
    }

    /// Interposes the router: instances read per-instance growing channels
    /// fed by a forwarder process draining the public endpoint. Closing the
    /// public channel closes the instance channels; an upstream failure (or a
    /// panicking key) poisons them.
    fn route<A: Clone + Send + 'static>(
        &self,
        port: &str,
        source: In<A>,
        router: Router<A>,
    ) -> Result<(), DefinitionError> {
        let Some(g) = source.runtime() else {
            // The source's runtime is gone; any read would fail anyway.
            for t in &self.instances {
                t.bind_in(port, orphaned_in::<A>())?;
            }
            return Ok(());
        };
        let cores: Vec<Arc<ChanCore<A>>> = (0..self.instances.len())
            .map(|_| ChanCore::new(Arc::downgrade(&g.inner), ChannelKind::Growing))
            .collect();
        for (t, core) in self.instances.iter().zip(&cores) {
            t.bind_in(port, In::from_source(core.clone()))?;
        }
        g.spawn(async move {
            loop {
                match source.read().await {
                    Ok(m) => match &router {
                        Router::Duplicate => {
                            for core in &cores {
                                core.register_writer(WriteWaiter::ready(m.clone(), Box::new(|_| {})));
                            }
                        }
                        Router::Distribute(key) => match catch_unwind(AssertUnwindSafe(|| key(&m))) {
                            Ok(i) => cores[i % cores.len()]
                                .register_writer(WriteWaiter::ready(m, Box::new(|_| {}))),
                            Err(panic) => {
                                let f = Failure::from_panic(panic);
                                for core in &cores {
                                    core.poison(f.clone());
                                }
                                return Ok(());
                            }
                        },
                    },
                    Err(Failure::EndOfInput) => {
                        for core in &cores {
                            core.close();
                        }
                        return Ok(());
                    }
                    Err(f) => {
                        for core in &cores {
                            core.poison(f.clone());
                        }
                        return Ok(());
                    }
                }
            }
        });
        Ok(())
    }

    /// Starts every instance; the group holds exactly the `n` handles.
    pub fn start(self, g: &Gopher) -> Result<RunningReplica, DefinitionError> {
        let handles = self
            .instances
            .into_iter()
            .map(|t| t.start(g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RunningReplica { handles })
    }
}

/// Handles of a started replica group, one per instance.
pub struct RunningReplica {
    handles: Vec<RunningTransputer>,
}

impl RunningReplica {
    pub fn instance_count(&self) -> usize {
        self.handles.len()
    }

    pub fn handles_mut(&mut self) -> &mut [RunningTransputer] {
        &mut self.handles
    }

    pub fn into_handles(self) -> Vec<RunningTransputer> {
        self.handles
    }
}
