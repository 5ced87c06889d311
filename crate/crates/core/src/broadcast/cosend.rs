//! Causally ordered recoverable broadcast (`co_send`).
//!
//! A round-`r` value for `r > 1` is an id-set naming the round-`(r-1)`
//! messages its sender processed. A processor only joins the sender's RecRB,
//! and only delivers an accepted value, once every named round-`(r-1)`
//! message has been processed locally.

use std::collections::BTreeSet;

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::broadcast::recrb::{RecRbAction, RecRbInstance};
use crate::error::{Error, Result};
use crate::message::{CoKey, Push, Value};

/// Processed `(round, sender)` pairs.
pub type Processed = BTreeSet<(u32, ProcessorId)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GatePhase {
    PreJoin,
    PostAccept,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Ready,
    Blocked,
    /// The value can never pass (wrong shape, or the sender is missing from
    /// its own id-set).
    Never,
}

/// Causal readiness of `value` for co_send `key`.
pub fn cosend_gate(key: CoKey, value: &Value, phase: GatePhase, processed: &Processed) -> Gate {
    if key.round <= 1 {
        return Gate::Ready;
    }
    let Some(ids) = value.as_ids() else { return Gate::Never };
    let prev = key.round - 1;
    let needed = match phase {
        GatePhase::PreJoin if !ids.contains(key.sender) => return Gate::Never,
        GatePhase::PreJoin => ids,
        // Delivery also needs the sender's own previous round, which is what
        // its replica advances from.
        GatePhase::PostAccept => ids.union(ProcSet::singleton(key.sender)),
    };
    if needed.iter().all(|q| processed.contains(&(prev, q))) {
        Gate::Ready
    } else {
        Gate::Blocked
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoSendAction {
    /// Pass-through from the underlying RecRB (pushes, RB invocations).
    RecRb(RecRbAction),
    /// RecRB accepted `value`; causal predecessors may still be missing.
    RecRbAccepted(Value),
    /// Deliver `⟨r, s, v⟩` into the accepted-unprocessed set.
    Accept(Value),
}

#[derive(Clone, Debug)]
pub struct CoSendInstance {
    key: CoKey,
    recrb: RecRbInstance,
    invoked: bool,
    joined: bool,
    parked: Vec<Push>,
    pending_accept: Option<Value>,
    delivered: Option<Value>,
}

impl CoSendInstance {
    pub fn new(key: CoKey, me: ProcessorId) -> Self {
        CoSendInstance {
            key,
            recrb: RecRbInstance::new(key, me),
            invoked: false,
            joined: false,
            parked: Vec::new(),
            pending_accept: None,
            delivered: None,
        }
    }

    pub fn key(&self) -> CoKey {
        self.key
    }

    pub fn recrb(&self) -> &RecRbInstance {
        &self.recrb
    }

    pub fn joined(&self) -> bool {
        self.joined
    }

    pub fn delivered(&self) -> Option<&Value> {
        self.delivered.as_ref()
    }

    pub fn has_pending(&self) -> bool {
        !self.parked.is_empty() || self.pending_accept.is_some()
    }

    pub fn invoke(&mut self, value: Value) -> Result<Vec<CoSendAction>> {
        if self.invoked {
            return Err(Error::AlreadyInvoked);
        }
        let out = self.recrb.start_sender(value)?;
        self.invoked = true;
        Ok(out.into_iter().map(CoSendAction::RecRb).collect())
    }

    pub fn on_push(&mut self, push: Push, c: &BadSetCollection, processed: &Processed) -> Vec<CoSendAction> {
        match cosend_gate(self.key, &push.value, GatePhase::PreJoin, processed) {
            Gate::Ready => self.join(push, c),
            Gate::Blocked => {
                self.parked.push(push);
                Vec::new()
            }
            Gate::Never => Vec::new(),
        }
    }

    fn join(&mut self, push: Push, c: &BadSetCollection) -> Vec<CoSendAction> {
        self.joined = true;
        let acts = self.recrb.on_push(push, c);
        self.lift(acts)
    }

    pub fn on_rb_accept(
        &mut self,
        iter: u32,
        origin: ProcessorId,
        value: Value,
        c: &BadSetCollection,
        processed: &Processed,
    ) -> Vec<CoSendAction> {
        let acts = self.recrb.on_rb_accept(iter, origin, value, c);
        let mut out = self.lift(acts);
        out.extend(self.poll(c, processed));
        out
    }

    pub fn on_output_quorum(&mut self) -> Option<CoSendAction> {
        self.recrb.on_output_quorum().map(CoSendAction::RecRb)
    }

    /// Re-evaluates parked pushes and a pending delivery against the current
    /// processed set.
    pub fn poll(&mut self, c: &BadSetCollection, processed: &Processed) -> Vec<CoSendAction> {
        let mut out = Vec::new();
        if !self.parked.is_empty() {
            let parked = std::mem::take(&mut self.parked);
            for push in parked {
                out.extend(self.on_push(push, c, processed));
            }
        }
        if let Some(v) = self.pending_accept.take() {
            match cosend_gate(self.key, &v, GatePhase::PostAccept, processed) {
                Gate::Ready => {
                    self.delivered = Some(v.clone());
                    out.push(CoSendAction::Accept(v));
                }
                Gate::Blocked => self.pending_accept = Some(v),
                Gate::Never => {}
            }
        }
        out
    }

    fn lift(&mut self, acts: Vec<RecRbAction>) -> Vec<CoSendAction> {
        let mut out = Vec::with_capacity(acts.len());
        for act in acts {
            match act {
                RecRbAction::Accept(v) => {
                    self.pending_accept = Some(v.clone());
                    out.push(CoSendAction::RecRbAccepted(v));
                }
                other => out.push(CoSendAction::RecRb(other)),
            }
        }
        out
    }
}
