//! Whole-system driver: one [`Node`] per processor on a shared
//! [`Network`].

use crate::adversary_structure::{BadSetCollection, ProcessorId};
use crate::engine::{Mode, SyncProtocol};
use crate::error::{Error, Result};
use crate::message::{CoKey, Value};
use crate::net::{AdversaryPolicy, Network, Outbox};
use crate::node::{Env, Node};
use crate::trace::{Event, Trace, TraceEvent, TraceHeader};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    /// No pending messages remain.
    Drained,
    /// The stop predicate held.
    Stopped,
    /// The delivery budget ran out with messages still pending.
    Budget,
}

pub struct Simulation<P: SyncProtocol> {
    proto: P,
    c: BadSetCollection,
    mode: Mode,
    core_quorum: usize,
    nodes: Vec<Node<P>>,
    net: Network,
}

impl<P: SyncProtocol> Simulation<P> {
    pub fn new(proto: P, c: BadSetCollection, policy: AdversaryPolicy, mode: Mode, seed: u64) -> Result<Self> {
        let n = c.universe_size();
        let core_quorum = match (mode, c.threshold_t()) {
            (_, Some(t)) => n - t,
            (Mode::Bisynch, None) => n,
            (Mode::Bimo, None) => {
                return Err(Error::Config("the common core needs a threshold collection".into()));
            }
        };
        let net = Network::new(c.clone(), policy, seed)?;
        let nodes = (0..n).map(|i| Node::new(ProcessorId::from(i))).collect();
        Ok(Simulation { proto, c, mode, core_quorum, nodes, net })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn node(&self, p: ProcessorId) -> &Node<P> {
        &self.nodes[p.index()]
    }

    pub fn nodes(&self) -> &[Node<P>] {
        &self.nodes
    }

    pub fn protocol(&self) -> &P {
        &self.proto
    }

    pub fn is_silent(&self, p: ProcessorId) -> bool {
        self.net.policy().silent.contains(p)
    }

    fn check(&self, p: ProcessorId) -> Result<()> {
        if p.index() >= self.n() {
            return Err(Error::UnknownProcessor(p, self.n()));
        }
        Ok(())
    }

    fn with_node(
        &mut self,
        p: ProcessorId,
        f: impl FnOnce(&mut Node<P>, &Env<P>, &mut Outbox) -> Result<()>,
    ) -> Result<()> {
        self.check(p)?;
        if self.is_silent(p) {
            return Ok(());
        }
        let env = Env { c: &self.c, proto: &self.proto, core_quorum: self.core_quorum };
        let mut out = Outbox::new();
        let res = f(&mut self.nodes[p.index()], &env, &mut out);
        self.net.apply(p, out.into_effects())?;
        res
    }

    /// Starts `p`'s engine with `input`. Silent processors ignore this.
    pub fn start_engine(&mut self, p: ProcessorId, input: i64) -> Result<()> {
        let mode = self.mode;
        self.with_node(p, |node, env, out| node.start_engine(input, mode, env, out))
    }

    pub fn invoke_rb(&mut self, p: ProcessorId, value: Value) -> Result<()> {
        self.with_node(p, |node, env, out| node.invoke_rb(value, env, out))
    }

    pub fn cosend(&mut self, p: ProcessorId, key: CoKey, value: Value) -> Result<()> {
        self.with_node(p, |node, env, out| node.cosend(key, value, env, out))
    }

    /// Delivers one envelope. Returns `false` when nothing is pending.
    pub fn step(&mut self) -> bool {
        let Some(env) = self.net.step() else { return false };
        let to = env.to;
        if self.is_silent(to) {
            return true;
        }
        let ctx = Env { c: &self.c, proto: &self.proto, core_quorum: self.core_quorum };
        let mut out = Outbox::new();
        self.nodes[to.index()].deliver(env.from, env.msg, &ctx, &mut out);
        self.net.apply(to, out.into_effects()).expect("nodes only address known processors");
        true
    }

    /// Steps until the queue drains, `stop` holds, or `max_events`
    /// deliveries were made.
    pub fn run_until(&mut self, max_events: u64, mut stop: impl FnMut(&Self) -> bool) -> RunStatus {
        let mut budget = max_events;
        loop {
            if stop(self) {
                return RunStatus::Stopped;
            }
            if budget == 0 {
                return if self.net.pending() == 0 { RunStatus::Drained } else { RunStatus::Budget };
            }
            if !self.step() {
                return RunStatus::Drained;
            }
            budget -= 1;
        }
    }

    pub fn run(&mut self, max_events: u64) -> RunStatus {
        self.run_until(max_events, |_| false)
    }

    /// Every non-silent processor's own replica has output somewhere.
    pub fn all_output(&self) -> bool {
        (0..self.n())
            .map(ProcessorId::from)
            .filter(|p| !self.is_silent(*p))
            .all(|p| self.net.registry().contains_key(&p))
    }

    pub fn set_idle(&mut self) {
        self.net.set_idle();
    }

    /// Appends the `END` record and returns the trace.
    pub fn finish(mut self, header: TraceHeader, reason: &str) -> Trace {
        let complete = self.net.pending() == 0;
        self.net.record(Event::End { complete, reason: reason.to_string() });
        Trace { header, events: self.net.take_events() }
    }

    pub fn events(&self) -> &[TraceEvent] {
        self.net.events()
    }
}
