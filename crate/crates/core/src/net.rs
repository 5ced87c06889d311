//! Seeded asynchronous network with a scripted adversary.
//!
//! Envelopes are ranked by `now + delay` at send time and delivered in
//! `(rank, seq)` order. Messages from controlled processors pass through the
//! tamper script until the processor is released by the output registry.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::error::{Error, Result};
use crate::message::{Message, Value};
use crate::trace::{Event, TraceEvent};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub seq: u64,
    pub from: ProcessorId,
    pub to: ProcessorId,
    pub msg: Message,
    pub tampered: bool,
    pub sent_at: u64,
}

/// Built-in tampering behaviours for controlled senders.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "kebab-case")]
pub enum TamperScript {
    #[default]
    None,
    /// Input values sent to `targets` are replaced by `alt`.
    EquivocateInput {
        targets: ProcSet,
        alt: i64,
    },
    /// Id-set values gain the id `add`.
    FlipIdSets {
        add: ProcessorId,
    },
    DropAll,
    /// Drops the processor's own broadcasts (its RB initials and RecRB
    /// pushes) and lets its echo/ready traffic through.
    DropThenRecover,
    /// Per envelope: drop, replace an input value from `values`, or pass.
    RandomTamper {
        values: Vec<i64>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdversaryPolicy {
    pub controlled: ProcSet,
    /// Processors that never take a step.
    pub silent: ProcSet,
    pub recovery_order: Vec<ProcessorId>,
    pub script: TamperScript,
    pub max_delay: u64,
    /// Senders whose envelopes get an extra `slow_delay`.
    pub slow: ProcSet,
    pub slow_delay: u64,
}

impl Default for AdversaryPolicy {
    fn default() -> Self {
        AdversaryPolicy {
            controlled: ProcSet::EMPTY,
            silent: ProcSet::EMPTY,
            recovery_order: Vec::new(),
            script: TamperScript::None,
            max_delay: 10,
            slow: ProcSet::EMPTY,
            slow_delay: 0,
        }
    }
}

impl AdversaryPolicy {
    pub fn validate(&self, c: &BadSetCollection) -> Result<()> {
        let n = c.universe_size();
        let faulty = self.controlled.union(self.silent);
        for p in faulty.iter().chain(self.slow.iter()).chain(self.recovery_order.iter().copied()) {
            c.check_member(p)?;
        }
        if !c.is_bad(faulty) {
            return Err(Error::NotBad(faulty.to_string()));
        }
        if let Some(p) = self.recovery_order.iter().find(|p| !self.controlled.contains(**p)) {
            return Err(Error::Config(format!("recovery_order names {p}, which is not controlled")));
        }
        if self.max_delay == 0 {
            return Err(Error::Config("max_delay must be positive".into()));
        }
        match &self.script {
            TamperScript::EquivocateInput { targets, .. } if !targets.is_subset(ProcSet::universe(n)) => {
                Err(Error::Config(format!("tamper targets {targets} outside the universe")))
            }
            TamperScript::FlipIdSets { add } if add.index() >= n => Err(Error::UnknownProcessor(*add, n)),
            TamperScript::RandomTamper { values } if values.is_empty() => {
                Err(Error::Config("random-tamper needs at least one value".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    All,
    One(ProcessorId),
}

/// Side effects a processor asks the network to carry out, in order.
#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    Send(Dest, Message),
    Event(Event),
    /// Replica `p` produced `output` at this processor.
    Output(ProcessorId, serde_json::Value),
}

#[derive(Clone, Debug, Default)]
pub struct Outbox {
    effects: Vec<Effect>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send_all(&mut self, msg: Message) {
        self.effects.push(Effect::Send(Dest::All, msg));
    }

    pub fn send(&mut self, to: ProcessorId, msg: Message) {
        self.effects.push(Effect::Send(Dest::One(to), msg));
    }

    pub fn event(&mut self, e: Event) {
        self.effects.push(Effect::Event(e));
    }

    pub fn events(&mut self, es: impl IntoIterator<Item = Event>) {
        self.effects.extend(es.into_iter().map(Effect::Event));
    }

    pub fn output(&mut self, p: ProcessorId, value: serde_json::Value) {
        self.effects.push(Effect::Output(p, value));
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn effects(&self) -> &[Effect] {
        &self.effects
    }

    pub fn into_effects(self) -> Vec<Effect> {
        self.effects
    }
}

enum Verdict {
    Pass,
    Replace(Message),
    Drop,
}

pub struct Network {
    c: BadSetCollection,
    policy: AdversaryPolicy,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: BTreeMap<u64, Envelope>,
    next_env: u64,
    now: u64,
    delay_rng: ChaCha8Rng,
    tamper_rng: ChaCha8Rng,
    recovered: ProcSet,
    idle: bool,
    registry: BTreeMap<ProcessorId, serde_json::Value>,
    events: Vec<TraceEvent>,
    delivered: u64,
}

impl Network {
    pub fn new(c: BadSetCollection, policy: AdversaryPolicy, seed: u64) -> Result<Self> {
        policy.validate(&c)?;
        Ok(Network {
            c,
            policy,
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            next_env: 0,
            now: 0,
            delay_rng: ChaCha8Rng::seed_from_u64(seed),
            tamper_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a3e_0000_0001),
            recovered: ProcSet::EMPTY,
            idle: false,
            registry: BTreeMap::new(),
            events: Vec::new(),
            delivered: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.c.universe_size()
    }

    pub fn collection(&self) -> &BadSetCollection {
        &self.c
    }

    pub fn policy(&self) -> &AdversaryPolicy {
        &self.policy
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn recovered(&self) -> ProcSet {
        self.recovered
    }

    pub fn registry(&self) -> &BTreeMap<ProcessorId, serde_json::Value> {
        &self.registry
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.events)
    }

    /// Stops all tampering; queued envelopes keep their ranks.
    pub fn set_idle(&mut self) {
        self.idle = true;
    }

    pub fn is_idle(&self) -> bool {
        self.idle
    }

    /// The adversary still acts on `p`'s messages.
    pub fn under_attack(&self, p: ProcessorId) -> bool {
        !self.idle && self.policy.controlled.contains(p) && !self.recovered.contains(p)
    }

    pub fn record(&mut self, event: Event) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, time: self.now, event });
    }

    pub fn send(&mut self, from: ProcessorId, to: ProcessorId, msg: Message) -> Result<()> {
        let n = self.n();
        for p in [from, to] {
            if p.index() >= n {
                return Err(Error::UnknownProcessor(p, n));
            }
        }
        let env = self.next_env;
        self.next_env += 1;
        self.record(Event::Send { env, from, to, msg: msg.clone() });
        let (msg, tampered) = if from != to && self.under_attack(from) {
            match self.tamper(from, to, &msg) {
                Verdict::Pass => (msg, false),
                Verdict::Replace(m) => {
                    self.record(Event::Tamper { env, from, to, msg: m.clone() });
                    (m, true)
                }
                Verdict::Drop => {
                    self.record(Event::Drop { env, from, to });
                    return Ok(());
                }
            }
        } else {
            (msg, false)
        };
        let mut delay = self.delay_rng.gen_range(1..=self.policy.max_delay);
        if self.policy.slow.contains(from) {
            delay += self.policy.slow_delay;
        }
        let rank = self.now + delay;
        self.queue.push(Reverse((rank, env)));
        self.pending.insert(env, Envelope { seq: env, from, to, msg, tampered, sent_at: self.now });
        Ok(())
    }

    /// Carries out `from`'s effects in order.
    pub fn apply(&mut self, from: ProcessorId, effects: Vec<Effect>) -> Result<()> {
        for eff in effects {
            match eff {
                Effect::Send(Dest::All, msg) => {
                    for q in 0..self.n() {
                        self.send(from, ProcessorId::from(q), msg.clone())?;
                    }
                }
                Effect::Send(Dest::One(to), msg) => self.send(from, to, msg)?,
                Effect::Event(e) => self.record(e),
                Effect::Output(p, v) => self.register_output(p, v),
            }
        }
        Ok(())
    }

    /// Removes the minimum-rank envelope and records its delivery.
    pub fn step(&mut self) -> Option<Envelope> {
        let Reverse((rank, env)) = self.queue.pop()?;
        let e = self.pending.remove(&env).expect("queued envelope is pending");
        self.now = rank;
        self.delivered += 1;
        self.record(Event::Deliver { env, from: e.from, to: e.to });
        Some(e)
    }

    /// First registration of `p`'s output. Each registration that leaves the
    /// registry containing a good set releases the next controlled processor
    /// in the recovery order that has not output.
    pub fn register_output(&mut self, p: ProcessorId, value: serde_json::Value) {
        if let Some(prev) = self.registry.get(&p) {
            if *prev != value {
                self.record(Event::Warn {
                    actor: Some(p),
                    detail: format!("second output {value} for {p} differs from registered {prev}"),
                });
            }
            return;
        }
        self.registry.insert(p, value.clone());
        self.record(Event::Output { actor: p, output: value });
        let done: ProcSet = self.registry.keys().copied().collect();
        if !self.c.contains_good_set(done) {
            return;
        }
        let next = self
            .policy
            .recovery_order
            .iter()
            .copied()
            .find(|q| !done.contains(*q) && !self.recovered.contains(*q) && !self.policy.silent.contains(*q));
        if let Some(q) = next {
            self.recovered.insert(q);
            self.record(Event::Recover { actor: q });
        }
    }

    fn tamper(&mut self, from: ProcessorId, to: ProcessorId, msg: &Message) -> Verdict {
        match &self.policy.script {
            TamperScript::None => Verdict::Pass,
            TamperScript::DropAll => Verdict::Drop,
            TamperScript::DropThenRecover => {
                let own = match msg {
                    Message::Rb { key, phase, .. } => key.origin == from && *phase == crate::message::RbPhase::Initial,
                    Message::Push { ctx, .. } => ctx.sender == from,
                    Message::Core { .. } => false,
                };
                if own {
                    Verdict::Drop
                } else {
                    Verdict::Pass
                }
            }
            TamperScript::EquivocateInput { targets, alt } => {
                if !targets.contains(to) {
                    return Verdict::Pass;
                }
                let alt = *alt;
                replace_value(msg, |v| match v {
                    Value::Input(x) if *x != alt => Some(Value::Input(alt)),
                    _ => None,
                })
            }
            TamperScript::FlipIdSets { add } => {
                let add = *add;
                replace_value(msg, |v| match v {
                    Value::Ids(s) if !s.contains(add) => Some(Value::Ids(s.union(ProcSet::singleton(add)))),
                    _ => None,
                })
            }
            TamperScript::RandomTamper { values } => {
                let values = values.clone();
                match self.tamper_rng.gen_range(0..4u8) {
                    0 => Verdict::Drop,
                    1 => {
                        let x = values[self.tamper_rng.gen_range(0..values.len())];
                        replace_value(msg, |v| match v {
                            Value::Input(y) if *y != x => Some(Value::Input(x)),
                            _ => None,
                        })
                    }
                    _ => Verdict::Pass,
                }
            }
        }
    }
}

/// Applies `f` to the value a message carries; `Pass` if nothing changes.
fn replace_value(msg: &Message, f: impl Fn(&Value) -> Option<Value>) -> Verdict {
    match msg {
        Message::Rb { key, phase, value } => match f(value) {
            Some(v) => Verdict::Replace(Message::Rb { key: *key, phase: *phase, value: v }),
            None => Verdict::Pass,
        },
        Message::Push { ctx, push } => match f(&push.value) {
            Some(v) => {
                let mut push = push.clone();
                push.value = v;
                Verdict::Replace(Message::Push { ctx: *ctx, push })
            }
            None => Verdict::Pass,
        },
        Message::Core { .. } => Verdict::Pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{CoKey, RbKey, RbPhase};

    fn p(i: u8) -> ProcessorId {
        ProcessorId(i)
    }

    fn rb(origin: u8, phase: RbPhase, v: Value) -> Message {
        let ctx = CoKey { round: 1, sender: p(origin) };
        Message::Rb { key: RbKey { ctx, iter: 1, origin: p(origin) }, phase, value: v }
    }

    fn net(policy: AdversaryPolicy, seed: u64) -> Network {
        Network::new(BadSetCollection::threshold(4, 1).unwrap(), policy, seed).unwrap()
    }

    fn drain(net: &mut Network) -> Vec<Envelope> {
        std::iter::from_fn(|| net.step()).collect()
    }

    #[test]
    fn correct_sender_delivered_untouched() {
        let mut n = net(AdversaryPolicy::default(), 1);
        n.send(p(0), p(1), rb(0, RbPhase::Initial, Value::Input(4))).unwrap();
        let got = drain(&mut n);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].msg, rb(0, RbPhase::Initial, Value::Input(4)));
        assert!(!got[0].tampered);
        assert!(n.step().is_none());
    }

    #[test]
    fn unknown_processor_rejected() {
        let mut n = net(AdversaryPolicy::default(), 1);
        assert_eq!(n.send(p(0), p(9), rb(0, RbPhase::Initial, Value::Input(4))), Err(Error::UnknownProcessor(p(9), 4)));
    }

    #[test]
    fn ties_broken_by_seq() {
        let mut n = net(AdversaryPolicy { max_delay: 1, ..AdversaryPolicy::default() }, 1);
        for q in 0..4 {
            n.send(p(q), p(0), rb(q, RbPhase::Echo, Value::Input(1))).unwrap();
        }
        let order: Vec<u64> = drain(&mut n).iter().map(|e| e.seq).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn equivocation_per_receiver() {
        let policy = AdversaryPolicy {
            controlled: ProcSet::from([3]),
            script: TamperScript::EquivocateInput { targets: ProcSet::from([2]), alt: 9 },
            ..AdversaryPolicy::default()
        };
        let mut n = net(policy, 5);
        for q in 0..4 {
            n.send(p(3), p(q), rb(3, RbPhase::Initial, Value::Input(3))).unwrap();
        }
        let mut got: BTreeMap<ProcessorId, Value> = BTreeMap::new();
        for e in drain(&mut n) {
            if let Message::Rb { value, .. } = e.msg {
                got.insert(e.to, value);
            }
        }
        assert_eq!(got[&p(2)], Value::Input(9));
        assert_eq!(got[&p(1)], Value::Input(3));
        assert!(n.events().iter().any(|e| matches!(e.event, Event::Tamper { to, .. } if to == p(2))));
    }

    #[test]
    fn drop_all_never_delivers_but_self() {
        let policy = AdversaryPolicy {
            controlled: ProcSet::from([1]),
            script: TamperScript::DropAll,
            ..AdversaryPolicy::default()
        };
        let mut n = net(policy, 2);
        for q in 0..4 {
            n.send(p(1), p(q), rb(1, RbPhase::Initial, Value::Input(3))).unwrap();
        }
        let got = drain(&mut n);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].to, p(1));
        assert_eq!(n.events().iter().filter(|e| matches!(e.event, Event::Drop { .. })).count(), 3);
    }

    #[test]
    fn recovery_after_good_set_of_outputs() {
        let policy = AdversaryPolicy {
            controlled: ProcSet::from([3]),
            recovery_order: vec![p(3)],
            script: TamperScript::DropAll,
            ..AdversaryPolicy::default()
        };
        let mut n = net(policy, 2);
        n.register_output(p(0), serde_json::json!(1));
        n.register_output(p(1), serde_json::json!(1));
        assert!(n.under_attack(p(3)));
        n.register_output(p(1), serde_json::json!(2));
        assert!(n.events().iter().any(|e| matches!(e.event, Event::Warn { .. })));
        n.register_output(p(2), serde_json::json!(1));
        assert!(!n.under_attack(p(3)));
        assert!(matches!(n.events().last().unwrap().event, Event::Recover { actor } if actor == p(3)));
        n.send(p(3), p(0), rb(3, RbPhase::Initial, Value::Input(3))).unwrap();
        assert_eq!(drain(&mut n).len(), 1);
    }

    #[test]
    fn replay_is_identical() {
        let policy = AdversaryPolicy {
            controlled: ProcSet::from([2]),
            script: TamperScript::RandomTamper { values: vec![1, 2] },
            ..AdversaryPolicy::default()
        };
        let run = |seed| {
            let mut n = net(policy.clone(), seed);
            for q in 0..4 {
                for r in 0..4 {
                    n.send(p(q), p(r), rb(q, RbPhase::Echo, Value::Input(7))).unwrap();
                }
            }
            drain(&mut n);
            n.take_events()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn policy_validation() {
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let bad = AdversaryPolicy { controlled: ProcSet::from([1, 2]), ..AdversaryPolicy::default() };
        assert!(matches!(bad.validate(&c), Err(Error::NotBad(_))));
        let stray =
            AdversaryPolicy { controlled: ProcSet::from([1]), recovery_order: vec![p(2)], ..Default::default() };
        assert!(matches!(stray.validate(&c), Err(Error::Config(_))));
    }
}
