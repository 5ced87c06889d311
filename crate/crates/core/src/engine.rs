//! Replicated execution of a deterministic synchronous protocol on top of
//! co_send.
//!
//! Every processor keeps one replica of every processor's state machine.
//! An accepted round-`r` id-set from `p_i` is applied to replica `i` using
//! the round-`(r-1)` messages that the named replicas address to `p_i`.

use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::error::{Error, Result};
use crate::message::{CoKey, Value};
use crate::trace::Event;

/// A deterministic round-based protocol. Round 1 is `initial`; round
/// `r > 1` applies `transition` to the messages computed by `outgoing` on
/// round-`(r-1)` states.
pub trait SyncProtocol {
    type State: Clone + Debug + Serialize;
    type Msg: Clone + Debug;
    type Output: Clone + Debug + Eq + Serialize;

    /// Every valid run outputs by this round.
    fn horizon(&self) -> u32;

    fn initial(&self, me: ProcessorId, input: i64) -> Result<(Self::State, Option<Self::Output>)>;

    /// Messages a processor in `state` sends in the next round, by receiver.
    fn outgoing(&self, state: &Self::State) -> BTreeMap<ProcessorId, Self::Msg>;

    fn transition(
        &self,
        me: ProcessorId,
        received: &BTreeMap<ProcessorId, Self::Msg>,
        state: &Self::State,
        round: u32,
    ) -> (Self::State, Option<Self::Output>);

    /// Task-level check of a set of outputs against the inputs they were
    /// computed from. `Err` carries a description of the violation.
    fn check_outputs(
        &self,
        _inputs: &BTreeMap<ProcessorId, i64>,
        _outputs: &BTreeMap<ProcessorId, Self::Output>,
    ) -> std::result::Result<(), String> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Advance as soon as `accept[r]` holds a good set.
    Bisynch,
    /// Run the common core on `accept[r]` before advancing.
    Bimo,
}

/// Short hex digest of a state's JSON encoding.
pub fn state_digest<S: Serialize>(state: &S) -> String {
    let bytes = serde_json::to_vec(state).expect("protocol state serializes");
    let hash = Sha256::digest(&bytes);
    hex::encode(&hash[..8])
}

#[derive(Clone, Debug)]
struct Replica<P: SyncProtocol> {
    states: BTreeMap<u32, P::State>,
    output: Option<P::Output>,
}

impl<P: SyncProtocol> Default for Replica<P> {
    fn default() -> Self {
        Replica { states: BTreeMap::new(), output: None }
    }
}

/// What the gate decided after `try_advance`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Advance {
    /// co_send `value` for the next round.
    Send(CoKey, Value),
    /// Run the common core for `round` starting from `view`.
    Core { round: u32, view: ProcSet },
}

/// Result of applying one accepted co_send value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied<O> {
    pub processed: bool,
    pub new_output: Option<O>,
}

#[derive(Clone, Debug)]
pub struct Engine<P: SyncProtocol> {
    me: ProcessorId,
    mode: Mode,
    round: u32,
    started: bool,
    replicas: BTreeMap<ProcessorId, Replica<P>>,
    accept: BTreeMap<u32, ProcSet>,
    outputs: ProcSet,
    awaiting_core: Option<u32>,
    sent: BTreeMap<u32, Value>,
}

impl<P: SyncProtocol> Engine<P> {
    pub fn new(me: ProcessorId, mode: Mode) -> Self {
        Engine {
            me,
            mode,
            round: 0,
            started: false,
            replicas: BTreeMap::new(),
            accept: BTreeMap::new(),
            outputs: ProcSet::EMPTY,
            awaiting_core: None,
            sent: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn accept(&self, round: u32) -> ProcSet {
        self.accept.get(&round).copied().unwrap_or_default()
    }

    /// The local `O`.
    pub fn output_set(&self) -> ProcSet {
        self.outputs
    }

    /// Value this processor co_sent in `round`.
    pub fn sent(&self, round: u32) -> Option<&Value> {
        self.sent.get(&round)
    }

    pub fn halted(&self) -> bool {
        self.outputs.contains(self.me)
    }

    /// Current outputs of all local replicas.
    pub fn replica_outputs(&self) -> BTreeMap<ProcessorId, P::Output> {
        self.replicas.iter().filter_map(|(i, r)| r.output.clone().map(|o| (*i, o))).collect()
    }

    pub fn replica_state(&self, i: ProcessorId, round: u32) -> Option<&P::State> {
        self.replicas.get(&i).and_then(|r| r.states.get(&round))
    }

    /// Round 1: broadcast the input.
    pub fn start(&mut self, input: i64) -> Result<(CoKey, Value)> {
        if self.started {
            return Err(Error::AlreadyStarted);
        }
        self.started = true;
        self.round = 1;
        let v = Value::Input(input);
        self.sent.insert(1, v.clone());
        Ok((CoKey { round: 1, sender: self.me }, v))
    }

    /// Applies the accepted `⟨r, p_i, π⟩` to replica `i`. Causal
    /// predecessors must already be processed; co_send guarantees this.
    pub fn process(&mut self, proto: &P, ctx: CoKey, value: &Value, events: &mut Vec<Event>) -> Applied<P::Output> {
        let (r, i) = (ctx.round, ctx.sender);
        let me = self.me;
        let (state, out) = if r == 1 {
            let Some(x) = value.as_input() else {
                events.push(Event::Warn {
                    actor: Some(me),
                    detail: format!("round-1 value {value} from {i} is not an input"),
                });
                return Applied { processed: false, new_output: None };
            };
            match proto.initial(i, x) {
                Ok((s, o)) => {
                    events.push(Event::SmInit { actor: me, replica: i, input: x, digest: state_digest(&s) });
                    (s, o)
                }
                Err(e) => {
                    events
                        .push(Event::Warn { actor: Some(me), detail: format!("replica {i} rejected input {x}: {e}") });
                    return Applied { processed: false, new_output: None };
                }
            }
        } else {
            let pi = value.as_ids().expect("co_send delivers id-sets after round 1");
            let mut received = BTreeMap::new();
            for j in pi.iter() {
                let sj = self
                    .replica_state(j, r - 1)
                    .unwrap_or_else(|| panic!("{me}: replica {j} has no round {} state for {ctx:?}", r - 1));
                if let Some(m) = proto.outgoing(sj).remove(&i) {
                    received.insert(j, m);
                }
            }
            let prev = self
                .replica_state(i, r - 1)
                .unwrap_or_else(|| panic!("{me}: replica {i} has no round {} state", r - 1));
            let (s, o) = proto.transition(i, &received, prev, r);
            events.push(Event::SmStep { actor: me, replica: i, round: r, pi, digest: state_digest(&s) });
            (s, o)
        };
        let replica = self.replicas.entry(i).or_default();
        replica.states.insert(r, state);
        let mut new_output = None;
        if let Some(o) = out {
            if replica.output.is_none() {
                let json = serde_json::to_value(&o).expect("protocol output serializes");
                events.push(Event::SmOutput { actor: me, replica: i, round: r, output: json });
                replica.output = Some(o.clone());
                self.outputs.insert(i);
                new_output = Some(o);
            }
        }
        self.accept.entry(r).or_default().insert(i);
        Applied { processed: true, new_output }
    }

    /// Checks the round gate and, when it holds, moves on.
    pub fn try_advance(&mut self, c: &BadSetCollection, horizon: u32, events: &mut Vec<Event>) -> Option<Advance> {
        if !self.started || self.halted() || self.awaiting_core.is_some() || self.round >= horizon {
            return None;
        }
        let acc = self.accept(self.round);
        if !acc.contains(self.me) || !c.contains_good_set(acc) {
            return None;
        }
        match self.mode {
            Mode::Bisynch => Some(self.next_round(acc, events)),
            Mode::Bimo => {
                self.awaiting_core = Some(self.round);
                Some(Advance::Core { round: self.round, view: acc })
            }
        }
    }

    /// The common core for `round` returned `set`.
    pub fn core_done(&mut self, round: u32, set: ProcSet, events: &mut Vec<Event>) -> Option<Advance> {
        if self.awaiting_core != Some(round) {
            return None;
        }
        self.awaiting_core = None;
        Some(self.next_round(set, events))
    }

    fn next_round(&mut self, set: ProcSet, events: &mut Vec<Event>) -> Advance {
        self.round += 1;
        let v = Value::Ids(set);
        self.sent.insert(self.round, v.clone());
        events.push(Event::RoundAdvance { actor: self.me, round: self.round, set });
        Advance::Send(CoKey { round: self.round, sender: self.me }, v)
    }
}
