//! One simulated processor: its broadcast instances, common-core instances
//! and (optionally) a replicated-protocol engine.

use std::collections::BTreeMap;

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::broadcast::cosend::{CoSendAction, CoSendInstance, Processed};
use crate::broadcast::rb::{RbAction, RbInstance};
use crate::broadcast::recrb::RecRbAction;
use crate::common_core::{CommonCoreInstance, CoreAction};
use crate::engine::{Advance, Engine, Mode, SyncProtocol};
use crate::error::{Error, Result};
use crate::message::{CoKey, Message, RbKey, RbPhase, Value};
use crate::net::Outbox;
use crate::trace::Event;

/// Shared, read-only context for handlers.
pub struct Env<'a, P> {
    pub c: &'a BadSetCollection,
    pub proto: &'a P,
    /// Quorum of the common core (`n - t`).
    pub core_quorum: usize,
}

#[derive(Clone, Debug)]
pub struct Node<P: SyncProtocol> {
    me: ProcessorId,
    rb: BTreeMap<RbKey, RbInstance>,
    co: BTreeMap<CoKey, CoSendInstance>,
    processed: Processed,
    engine: Option<Engine<P>>,
    cc: BTreeMap<u32, CommonCoreInstance>,
    /// Step-one counted sets awaiting their CC2 record.
    cc_counted: BTreeMap<u32, ProcSet>,
}

impl<P: SyncProtocol> Node<P> {
    pub fn new(me: ProcessorId) -> Self {
        Node {
            me,
            rb: BTreeMap::new(),
            co: BTreeMap::new(),
            processed: Processed::new(),
            engine: None,
            cc: BTreeMap::new(),
            cc_counted: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> ProcessorId {
        self.me
    }

    pub fn engine(&self) -> Option<&Engine<P>> {
        self.engine.as_ref()
    }

    pub fn rb_instance(&self, key: &RbKey) -> Option<&RbInstance> {
        self.rb.get(key)
    }

    pub fn cosend_instance(&self, key: &CoKey) -> Option<&CoSendInstance> {
        self.co.get(key)
    }

    pub fn cosend_instances(&self) -> impl Iterator<Item = &CoSendInstance> {
        self.co.values()
    }

    pub fn processed(&self) -> &Processed {
        &self.processed
    }

    pub fn start_engine(&mut self, input: i64, mode: Mode, env: &Env<P>, out: &mut Outbox) -> Result<()> {
        if self.engine.is_some() {
            return Err(Error::AlreadyStarted);
        }
        let mut engine = Engine::new(self.me, mode);
        let (key, value) = engine.start(input)?;
        self.engine = Some(engine);
        self.cosend(key, value, env, out)?;
        self.pump(env, out);
        Ok(())
    }

    /// Standalone reliable broadcast of `value`, outside any co_send.
    pub fn invoke_rb(&mut self, value: Value, env: &Env<P>, out: &mut Outbox) -> Result<()> {
        let key = RbKey { ctx: CoKey { round: 0, sender: self.me }, iter: 1, origin: self.me };
        self.start_rb(key, value, env, out)
    }

    /// Invokes co_send `key` (sender side).
    pub fn cosend(&mut self, key: CoKey, value: Value, env: &Env<P>, out: &mut Outbox) -> Result<()> {
        if key.sender != self.me {
            return Err(Error::NotSender(self.me));
        }
        let me = self.me;
        let acts = self.co.entry(key).or_insert_with(|| CoSendInstance::new(key, me)).invoke(value.clone())?;
        out.event(Event::InvokeRecrb { actor: me, ctx: key, value });
        self.apply_co(key, acts, env, out);
        Ok(())
    }

    fn start_rb(&mut self, key: RbKey, value: Value, env: &Env<P>, out: &mut Outbox) -> Result<()> {
        let me = self.me;
        let acts = self.rb.entry(key).or_insert_with(|| RbInstance::new(key, me)).invoke(value.clone())?;
        out.event(Event::InvokeRb { actor: me, key, value });
        self.apply_rb(key, acts, env, out);
        Ok(())
    }

    pub fn deliver(&mut self, from: ProcessorId, msg: Message, env: &Env<P>, out: &mut Outbox) {
        match msg {
            Message::Rb { key, phase, value } => {
                let me = self.me;
                let acts =
                    self.rb.entry(key).or_insert_with(|| RbInstance::new(key, me)).handle(from, phase, value, env.c);
                self.apply_rb(key, acts, env, out);
            }
            Message::Push { ctx, push } => {
                if from != ctx.sender || ctx.round == 0 {
                    return;
                }
                let me = self.me;
                let inst = self.co.entry(ctx).or_insert_with(|| CoSendInstance::new(ctx, me));
                let acts = inst.on_push(push, env.c, &self.processed);
                self.apply_co(ctx, acts, env, out);
            }
            Message::Core { round, phase, set } => {
                self.cc
                    .entry(round)
                    .or_insert_with(|| CommonCoreInstance::new(round, env.core_quorum))
                    .record(from, phase, set);
            }
        }
        self.pump(env, out);
    }

    fn apply_rb(&mut self, key: RbKey, acts: Vec<RbAction>, env: &Env<P>, out: &mut Outbox) {
        let me = self.me;
        for act in acts {
            match act {
                RbAction::Broadcast(phase, value) => {
                    match phase {
                        RbPhase::Initial => {}
                        RbPhase::Echo => out.event(Event::M1 { actor: me, key, value: value.clone() }),
                        RbPhase::Ready => out.event(Event::M2 { actor: me, key, value: value.clone() }),
                    }
                    out.send_all(Message::Rb { key, phase, value });
                }
                RbAction::Accept(value) => {
                    out.event(Event::AcceptRb { actor: me, key, value: value.clone() });
                    if key.ctx.round == 0 {
                        continue;
                    }
                    let ctx = key.ctx;
                    let inst = self.co.entry(ctx).or_insert_with(|| CoSendInstance::new(ctx, me));
                    let acts = inst.on_rb_accept(key.iter, key.origin, value, env.c, &self.processed);
                    self.apply_co(ctx, acts, env, out);
                }
            }
        }
    }

    fn apply_co(&mut self, ctx: CoKey, acts: Vec<CoSendAction>, env: &Env<P>, out: &mut Outbox) {
        let me = self.me;
        for act in acts {
            match act {
                CoSendAction::RecRb(RecRbAction::Push(push)) => {
                    out.event(Event::RecrbPush { actor: me, ctx, iter: push.iter, value: push.value.clone() });
                    out.send_all(Message::Push { ctx, push });
                }
                CoSendAction::RecRb(RecRbAction::Resend(push)) => {
                    out.event(Event::Resend { actor: me, ctx, iter: push.iter });
                    out.send_all(Message::Push { ctx, push });
                }
                CoSendAction::RecRb(RecRbAction::InvokeRb { iter, value }) => {
                    let key = RbKey { ctx, iter, origin: me };
                    // at most once per iteration, enforced by RecRB
                    if let Err(e) = self.start_rb(key, value, env, out) {
                        out.event(Event::Warn { actor: Some(me), detail: format!("RB {key:?}: {e}") });
                    }
                }
                CoSendAction::RecRb(RecRbAction::Accept(_)) => {}
                CoSendAction::RecRbAccepted(value) => out.event(Event::AcceptRecrb { actor: me, ctx, value }),
                CoSendAction::Accept(value) => {
                    out.event(Event::AcceptCosend { actor: me, ctx, value: value.clone() });
                    self.on_cosend_accept(ctx, value, env, out);
                }
            }
        }
    }

    fn on_cosend_accept(&mut self, ctx: CoKey, value: Value, env: &Env<P>, out: &mut Outbox) {
        let Some(engine) = self.engine.as_mut() else {
            self.processed.insert((ctx.round, ctx.sender));
            return;
        };
        let mut events = Vec::new();
        let applied = engine.process(env.proto, ctx, &value, &mut events);
        out.events(events);
        if applied.processed {
            self.processed.insert((ctx.round, ctx.sender));
        }
        if let Some(o) = applied.new_output {
            out.output(ctx.sender, serde_json::to_value(&o).expect("protocol output serializes"));
            if env.c.contains_good_set(engine.output_set()) {
                let own: Vec<CoKey> = self.co.keys().filter(|k| k.sender == self.me).copied().collect();
                for k in own {
                    if let Some(act) = self.co.get_mut(&k).and_then(|i| i.on_output_quorum()) {
                        self.apply_co(k, vec![act], env, out);
                    }
                }
            }
        }
    }

    /// Re-evaluates every wait condition until nothing changes.
    pub fn pump(&mut self, env: &Env<P>, out: &mut Outbox) {
        loop {
            let mut progressed = false;

            let waiting: Vec<CoKey> = self.co.iter().filter(|(_, i)| i.has_pending()).map(|(k, _)| *k).collect();
            for k in waiting {
                let acts = self.co.get_mut(&k).expect("instance exists").poll(env.c, &self.processed);
                if !acts.is_empty() {
                    progressed = true;
                    self.apply_co(k, acts, env, out);
                }
            }

            if let Some(engine) = self.engine.as_mut() {
                let mut events = Vec::new();
                let adv = engine.try_advance(env.c, env.proto.horizon(), &mut events);
                out.events(events);
                if let Some(adv) = adv {
                    progressed = true;
                    self.apply_advance(adv, env, out);
                }
            }

            let rounds: Vec<u32> = self.cc.keys().copied().collect();
            for r in rounds {
                let Some(acc) = self.engine.as_ref().map(|e| e.accept(r)) else { break };
                let acts = self.cc.get_mut(&r).expect("instance exists").poll(acc);
                if !acts.is_empty() {
                    progressed = true;
                    self.apply_core(r, acts, env, out);
                }
            }

            if !progressed {
                break;
            }
        }
    }

    fn apply_advance(&mut self, adv: Advance, env: &Env<P>, out: &mut Outbox) {
        match adv {
            Advance::Send(key, value) => {
                if let Err(e) = self.cosend(key, value, env, out) {
                    out.event(Event::Warn { actor: Some(self.me), detail: format!("co_send {key:?}: {e}") });
                }
            }
            Advance::Core { round, view } => {
                let inst = self.cc.entry(round).or_insert_with(|| CommonCoreInstance::new(round, env.core_quorum));
                match inst.start(view) {
                    Ok(acts) => self.apply_core(round, acts, env, out),
                    Err(e) => {
                        out.event(Event::Warn { actor: Some(self.me), detail: format!("common core {round}: {e}") })
                    }
                }
            }
        }
    }

    fn apply_core(&mut self, round: u32, acts: Vec<CoreAction>, env: &Env<P>, out: &mut Outbox) {
        let me = self.me;
        for act in acts {
            match act {
                CoreAction::Broadcast { step, set } => {
                    if step == 1 {
                        out.event(Event::Cc1 { actor: me, round, set });
                    } else {
                        let counted = self.cc_counted.remove(&round).unwrap_or_default();
                        out.event(Event::Cc2 { actor: me, round, set, counted });
                    }
                    out.send_all(Message::Core { round, phase: step, set });
                }
                CoreAction::StepOneDone { counted } => {
                    self.cc_counted.insert(round, counted);
                }
                CoreAction::Done(set) => {
                    let snapshot = self.cc[&round].snapshot();
                    out.event(Event::CcDone { actor: me, round, snapshot, set });
                    let Some(engine) = self.engine.as_mut() else { continue };
                    let mut events = Vec::new();
                    let adv = engine.core_done(round, set, &mut events);
                    out.events(events);
                    if let Some(adv) = adv {
                        self.apply_advance(adv, env, out);
                    }
                }
            }
        }
    }
}
