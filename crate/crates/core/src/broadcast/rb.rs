//! Reliable broadcast over a general bad-set collection.
//!
//! Each instance is owned by one processor and driven by the messages it
//! receives for one [`RbKey`]. Thresholds are expressed through the
//! collection: echo/ready support from a set containing a good set, or
//! ready support from a set that no single bad set covers.

use std::collections::BTreeMap;

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::error::{Error, Result};
use crate::message::{RbKey, RbPhase, Value};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RbAction {
    /// Send `(phase, value)` to every processor, including self.
    Broadcast(RbPhase, Value),
    Accept(Value),
}

#[derive(Clone, Debug)]
pub struct RbInstance {
    key: RbKey,
    me: ProcessorId,
    invoked: bool,
    echoes: BTreeMap<Value, ProcSet>,
    readies: BTreeMap<Value, ProcSet>,
    sent_echo: bool,
    sent_ready: bool,
    accepted: Option<Value>,
}

impl RbInstance {
    pub fn new(key: RbKey, me: ProcessorId) -> Self {
        RbInstance {
            key,
            me,
            invoked: false,
            echoes: BTreeMap::new(),
            readies: BTreeMap::new(),
            sent_echo: false,
            sent_ready: false,
            accepted: None,
        }
    }

    pub fn key(&self) -> RbKey {
        self.key
    }

    pub fn accepted(&self) -> Option<&Value> {
        self.accepted.as_ref()
    }

    pub fn invoke(&mut self, value: Value) -> Result<Vec<RbAction>> {
        if self.me != self.key.origin {
            return Err(Error::NotSender(self.me));
        }
        if self.invoked {
            return Err(Error::AlreadyInvoked);
        }
        self.invoked = true;
        Ok(vec![RbAction::Broadcast(RbPhase::Initial, value)])
    }

    /// Feeds one delivered message. A reporter counts at most once per
    /// (phase, value), but may count toward several values if its messages
    /// were tampered with.
    pub fn handle(&mut self, from: ProcessorId, phase: RbPhase, value: Value, c: &BadSetCollection) -> Vec<RbAction> {
        let mut out = Vec::new();
        match phase {
            RbPhase::Initial => {
                if from != self.key.origin || self.sent_echo {
                    return out;
                }
                self.sent_echo = true;
                out.push(RbAction::Broadcast(RbPhase::Echo, value));
                return out;
            }
            RbPhase::Echo => {
                self.echoes.entry(value.clone()).or_default().insert(from);
            }
            RbPhase::Ready => {
                self.readies.entry(value.clone()).or_default().insert(from);
            }
        }

        if !self.sent_ready {
            let echo_quorum = self.echoes.get(&value).is_some_and(|s| c.contains_good_set(*s));
            let ready_witness = self.readies.get(&value).is_some_and(|s| c.exceeds_every_bad_set(*s));
            if echo_quorum || ready_witness {
                self.sent_ready = true;
                out.push(RbAction::Broadcast(RbPhase::Ready, value.clone()));
            }
        }
        if self.accepted.is_none() && self.readies.get(&value).is_some_and(|s| c.contains_good_set(*s)) {
            self.accepted = Some(value.clone());
            out.push(RbAction::Accept(value));
        }
        out
    }
}
