//! Recoverable reliable broadcast.
//!
//! The sender pushes `⟨v, k, H[k-1]⟩` in iterations; every participant that
//! accepts a push for iteration `k` relays the value with its own reliable
//! broadcast `RB(k, self)`. Accepted broadcasts are collected per iteration
//! in `H[k]`, and the RecRB is accepted once some iteration holds a single
//! value with good-set support. A sender whose pushes were disrupted repeats
//! its last push each time the output set grows past a good set, which is
//! how it completes once the adversary lets go of it.
//!
//! The threshold tests are lifted to the bad-set collection: "n-t" becomes
//! [`BadSetCollection::contains_good_set`] and "t+1" becomes
//! [`BadSetCollection::exceeds_every_bad_set`].

use std::collections::{BTreeMap, BTreeSet};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::error::{Error, Result};
use crate::message::{CoKey, History, Push, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecRbAction {
    /// Send a push to every processor (sender only).
    Push(Push),
    /// Repeat the last push after the output set grew (sender only).
    Resend(Push),
    /// Start `RB(iter, self)` carrying `value`.
    InvokeRb {
        iter: u32,
        value: Value,
    },
    Accept(Value),
}

#[derive(Clone, Debug)]
struct SenderLoop {
    input: Value,
    iter: u32,
    last_push: Push,
    resends: u32,
}

#[derive(Clone, Debug)]
pub struct RecRbInstance {
    ctx: CoKey,
    me: ProcessorId,
    history: BTreeMap<u32, History>,
    invoked_rb: BTreeSet<u32>,
    /// Pushes waiting for `H'[k-1] ⊆ H[k-1]`.
    parked: Vec<Push>,
    accepted: Option<Value>,
    sender: Option<SenderLoop>,
}

/// Reporters in `history` that carry `value`.
pub fn support(history: &History, value: &Value) -> ProcSet {
    history.iter().filter(|(_, v)| *v == value).map(|(q, _)| *q).collect()
}

fn reporters(history: &History) -> ProcSet {
    history.keys().copied().collect()
}

fn distinct_values(history: &History) -> BTreeSet<&Value> {
    history.values().collect()
}

/// `H' ⊆ H` as sets of (reporter, value) pairs.
fn history_within(claimed: &History, local: Option<&History>) -> bool {
    claimed.is_empty() || local.is_some_and(|h| claimed.iter().all(|(q, v)| h.get(q) == Some(v)))
}

impl RecRbInstance {
    pub fn new(ctx: CoKey, me: ProcessorId) -> Self {
        RecRbInstance {
            ctx,
            me,
            history: BTreeMap::new(),
            invoked_rb: BTreeSet::new(),
            parked: Vec::new(),
            accepted: None,
            sender: None,
        }
    }

    pub fn ctx(&self) -> CoKey {
        self.ctx
    }

    pub fn accepted(&self) -> Option<&Value> {
        self.accepted.as_ref()
    }

    pub fn history(&self, iter: u32) -> Option<&History> {
        self.history.get(&iter)
    }

    pub fn is_sender(&self) -> bool {
        self.sender.is_some()
    }

    /// Sender side is still pushing (nothing accepted yet).
    pub fn sender_active(&self) -> bool {
        self.sender.is_some() && self.accepted.is_none()
    }

    pub fn resend_count(&self) -> u32 {
        self.sender.as_ref().map_or(0, |s| s.resends)
    }

    pub fn current_iter(&self) -> Option<u32> {
        self.sender.as_ref().map(|s| s.iter)
    }

    /// Sender entry point: push `⟨v, 1, ∅⟩`.
    pub fn start_sender(&mut self, value: Value) -> Result<Vec<RecRbAction>> {
        if self.me != self.ctx.sender {
            return Err(Error::NotSender(self.me));
        }
        if self.sender.is_some() {
            return Err(Error::AlreadyInvoked);
        }
        let push = Push { iter: 1, value: value.clone(), history: History::new() };
        self.sender = Some(SenderLoop { input: value, iter: 1, last_push: push.clone(), resends: 0 });
        Ok(vec![RecRbAction::Push(push)])
    }

    /// Participant side: a push from the sender that already passed any
    /// outer gating.
    pub fn on_push(&mut self, push: Push, c: &BadSetCollection) -> Vec<RecRbAction> {
        let mut out = Vec::new();
        if push.iter == 0 {
            return out;
        }
        if history_within(&push.history, self.history.get(&(push.iter - 1))) {
            self.try_invoke(&push, c, &mut out);
        } else {
            self.parked.push(push);
        }
        out
    }

    fn try_invoke(&mut self, push: &Push, c: &BadSetCollection, out: &mut Vec<RecRbAction>) {
        if self.invoked_rb.contains(&push.iter) {
            return;
        }
        let contradicted = distinct_values(&push.history)
            .into_iter()
            .any(|v| *v != push.value && c.exceeds_every_bad_set(support(&push.history, v)));
        if contradicted {
            return;
        }
        self.invoked_rb.insert(push.iter);
        out.push(RecRbAction::InvokeRb { iter: push.iter, value: push.value.clone() });
    }

    /// Some `RB(iter, origin)` of this RecRB was accepted with `value`.
    pub fn on_rb_accept(
        &mut self,
        iter: u32,
        origin: ProcessorId,
        value: Value,
        c: &BadSetCollection,
    ) -> Vec<RecRbAction> {
        let mut out = Vec::new();
        let h = self.history.entry(iter).or_default();
        if h.contains_key(&origin) {
            return out;
        }
        h.insert(origin, value.clone());

        // Parked pushes for iteration iter+1 may now be covered.
        let ready: Vec<Push> = {
            let local = self.history.get(&iter);
            let (ready, waiting): (Vec<Push>, Vec<Push>) = std::mem::take(&mut self.parked)
                .into_iter()
                .partition(|p| p.iter == iter + 1 && history_within(&p.history, local));
            self.parked = waiting;
            ready
        };
        for push in &ready {
            self.try_invoke(push, c, &mut out);
        }

        if self.accepted.is_none() {
            let h = &self.history[&iter];
            if c.contains_good_set(support(h, &value)) {
                self.accepted = Some(value.clone());
                out.push(RecRbAction::Accept(value));
            }
        }

        self.advance_sender(c, &mut out);
        out
    }

    fn advance_sender(&mut self, c: &BadSetCollection, out: &mut Vec<RecRbAction>) {
        if self.accepted.is_some() {
            return;
        }
        let Some(sender) = self.sender.as_mut() else { return };
        loop {
            let Some(h) = self.history.get(&sender.iter) else { return };
            if !c.contains_good_set(reporters(h)) {
                return;
            }
            let backed: Vec<&Value> =
                distinct_values(h).into_iter().filter(|v| c.exceeds_every_bad_set(support(h, v))).collect();
            let next = match backed.as_slice() {
                [only] => (*only).clone(),
                _ => sender.input.clone(),
            };
            sender.iter += 1;
            let push = Push { iter: sender.iter, value: next, history: h.clone() };
            sender.last_push = push.clone();
            out.push(RecRbAction::Push(push));
        }
    }

    /// The local output set grew and now contains a good set: a sender that
    /// has not completed repeats its last push.
    pub fn on_output_quorum(&mut self) -> Option<RecRbAction> {
        if self.accepted.is_some() {
            return None;
        }
        let sender = self.sender.as_mut()?;
        sender.resends += 1;
        Some(RecRbAction::Resend(sender.last_push.clone()))
    }
}
