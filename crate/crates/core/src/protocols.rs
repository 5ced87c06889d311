//! Payload protocols for the engine, and a direct executor of the benign
//! synchronous model used as a reference.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::engine::{Mode, SyncProtocol};
use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// Approximate agreement on integers in `[lo, hi]` by repeated midpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpsilonAgreement {
    n: usize,
    lo: i64,
    hi: i64,
    rounds: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsState {
    pub value: Rational,
}

impl EpsilonAgreement {
    pub fn new(n: usize, lo: i64, hi: i64) -> Result<Self> {
        if hi <= lo {
            return Err(Error::Config(format!("empty interval [{lo}, {hi}]")));
        }
        let width = hi.checked_sub(lo).ok_or_else(|| Error::Config("interval too wide".into()))?;
        // ceil(log2(width)) + 1
        let rounds = (u64::BITS - (width as u64 - 1).leading_zeros()) + 1;
        if rounds > 60 {
            return Err(Error::Config("interval too wide".into()));
        }
        Ok(EpsilonAgreement { n, lo, hi, rounds })
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn interval(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    fn finish(&self, value: Rational, round: u32) -> (EpsState, Option<i64>) {
        let out = (round >= self.rounds).then(|| value.floor().to_integer());
        (EpsState { value }, out)
    }
}

impl SyncProtocol for EpsilonAgreement {
    type State = EpsState;
    type Msg = Rational;
    type Output = i64;

    fn horizon(&self) -> u32 {
        self.rounds
    }

    fn initial(&self, _me: ProcessorId, input: i64) -> Result<(EpsState, Option<i64>)> {
        if input < self.lo || input > self.hi {
            return Err(Error::InvalidInput(format!("{input} outside [{}, {}]", self.lo, self.hi)));
        }
        Ok(self.finish(Rational::from_integer(input), 1))
    }

    fn outgoing(&self, state: &EpsState) -> BTreeMap<ProcessorId, Rational> {
        (0..self.n).map(|q| (ProcessorId::from(q), state.value)).collect()
    }

    fn transition(
        &self,
        _me: ProcessorId,
        received: &BTreeMap<ProcessorId, Rational>,
        state: &EpsState,
        round: u32,
    ) -> (EpsState, Option<i64>) {
        let min = received.values().min();
        let max = received.values().max();
        let value = match (min, max) {
            (Some(a), Some(b)) => (a + b) / 2,
            _ => state.value,
        };
        self.finish(value, round)
    }

    fn check_outputs(
        &self,
        inputs: &BTreeMap<ProcessorId, i64>,
        outputs: &BTreeMap<ProcessorId, i64>,
    ) -> std::result::Result<(), String> {
        check_epsilon_outputs(inputs.values().copied(), outputs)
    }
}

/// Outputs lie in the hull of `inputs` and differ pairwise by at most 1.
pub fn check_epsilon_outputs(
    inputs: impl IntoIterator<Item = i64>,
    outputs: &BTreeMap<ProcessorId, i64>,
) -> std::result::Result<(), String> {
    let inputs: Vec<i64> = inputs.into_iter().collect();
    let (Some(&lo), Some(&hi)) = (inputs.iter().min(), inputs.iter().max()) else {
        return if outputs.is_empty() { Ok(()) } else { Err("outputs without inputs".into()) };
    };
    for (p, o) in outputs {
        if *o < lo || *o > hi {
            return Err(format!("{p} output {o} outside hull [{lo}, {hi}]"));
        }
    }
    let (omin, omax) = (outputs.values().min(), outputs.values().max());
    if let (Some(a), Some(b)) = (omin, omax) {
        if b - a > 1 {
            return Err(format!("outputs {a} and {b} are not adjacent"));
        }
    }
    Ok(())
}

/// Two-round smoke protocol: everyone sends its input, then outputs the
/// sorted inputs it received.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flood {
    n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloodState {
    pub input: i64,
    pub done: bool,
}

impl Flood {
    pub fn new(n: usize) -> Self {
        Flood { n }
    }
}

impl SyncProtocol for Flood {
    type State = FloodState;
    type Msg = i64;
    type Output = Vec<i64>;

    fn horizon(&self) -> u32 {
        2
    }

    fn initial(&self, _me: ProcessorId, input: i64) -> Result<(FloodState, Option<Vec<i64>>)> {
        Ok((FloodState { input, done: false }, None))
    }

    fn outgoing(&self, state: &FloodState) -> BTreeMap<ProcessorId, i64> {
        if state.done {
            return BTreeMap::new();
        }
        (0..self.n).map(|q| (ProcessorId::from(q), state.input)).collect()
    }

    fn transition(
        &self,
        _me: ProcessorId,
        received: &BTreeMap<ProcessorId, i64>,
        state: &FloodState,
        round: u32,
    ) -> (FloodState, Option<Vec<i64>>) {
        if state.done || round != 2 {
            return (state.clone(), None);
        }
        let mut got: Vec<i64> = received.values().copied().collect();
        got.sort_unstable();
        (FloodState { input: state.input, done: true }, Some(got))
    }
}

/// Protocol selection as written in scenario files and trace headers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ProtocolConfig {
    EpsilonAgreement { lo: i64, hi: i64 },
    Flood,
}

/// Runtime choice between the bundled protocols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnyProtocol {
    Epsilon(EpsilonAgreement),
    Flood(Flood),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyState {
    Epsilon(EpsState),
    Flood(FloodState),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnyMsg {
    Value(Rational),
    Input(i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyOutput {
    Int(i64),
    List(Vec<i64>),
}

impl AnyProtocol {
    pub fn from_config(cfg: &ProtocolConfig, n: usize) -> Result<Self> {
        Ok(match cfg {
            ProtocolConfig::EpsilonAgreement { lo, hi } => AnyProtocol::Epsilon(EpsilonAgreement::new(n, *lo, *hi)?),
            ProtocolConfig::Flood => AnyProtocol::Flood(Flood::new(n)),
        })
    }

    /// Finite value set used when searching for replaced inputs.
    pub fn candidate_domain(&self, seen: impl IntoIterator<Item = i64>) -> Vec<i64> {
        let mut dom: Vec<i64> = match self {
            AnyProtocol::Epsilon(e) => (e.lo..=e.hi).collect(),
            AnyProtocol::Flood(_) => Vec::new(),
        };
        dom.extend(seen);
        dom.sort_unstable();
        dom.dedup();
        dom
    }
}

impl SyncProtocol for AnyProtocol {
    type State = AnyState;
    type Msg = AnyMsg;
    type Output = AnyOutput;

    fn horizon(&self) -> u32 {
        match self {
            AnyProtocol::Epsilon(e) => e.horizon(),
            AnyProtocol::Flood(f) => f.horizon(),
        }
    }

    fn initial(&self, me: ProcessorId, input: i64) -> Result<(AnyState, Option<AnyOutput>)> {
        Ok(match self {
            AnyProtocol::Epsilon(e) => {
                let (s, o) = e.initial(me, input)?;
                (AnyState::Epsilon(s), o.map(AnyOutput::Int))
            }
            AnyProtocol::Flood(f) => {
                let (s, o) = f.initial(me, input)?;
                (AnyState::Flood(s), o.map(AnyOutput::List))
            }
        })
    }

    fn outgoing(&self, state: &AnyState) -> BTreeMap<ProcessorId, AnyMsg> {
        match (self, state) {
            (AnyProtocol::Epsilon(e), AnyState::Epsilon(s)) => {
                e.outgoing(s).into_iter().map(|(q, m)| (q, AnyMsg::Value(m))).collect()
            }
            (AnyProtocol::Flood(f), AnyState::Flood(s)) => {
                f.outgoing(s).into_iter().map(|(q, m)| (q, AnyMsg::Input(m))).collect()
            }
            _ => BTreeMap::new(),
        }
    }

    fn transition(
        &self,
        me: ProcessorId,
        received: &BTreeMap<ProcessorId, AnyMsg>,
        state: &AnyState,
        round: u32,
    ) -> (AnyState, Option<AnyOutput>) {
        match (self, state) {
            (AnyProtocol::Epsilon(e), AnyState::Epsilon(s)) => {
                let got = received
                    .iter()
                    .filter_map(|(q, m)| match m {
                        AnyMsg::Value(v) => Some((*q, *v)),
                        AnyMsg::Input(_) => None,
                    })
                    .collect();
                let (s, o) = e.transition(me, &got, s, round);
                (AnyState::Epsilon(s), o.map(AnyOutput::Int))
            }
            (AnyProtocol::Flood(f), AnyState::Flood(s)) => {
                let got = received
                    .iter()
                    .filter_map(|(q, m)| match m {
                        AnyMsg::Input(v) => Some((*q, *v)),
                        AnyMsg::Value(_) => None,
                    })
                    .collect();
                let (s, o) = f.transition(me, &got, s, round);
                (AnyState::Flood(s), o.map(AnyOutput::List))
            }
            _ => (state.clone(), None),
        }
    }

    fn check_outputs(
        &self,
        inputs: &BTreeMap<ProcessorId, i64>,
        outputs: &BTreeMap<ProcessorId, AnyOutput>,
    ) -> std::result::Result<(), String> {
        match self {
            AnyProtocol::Epsilon(_) => {
                let mut ints = BTreeMap::new();
                for (p, o) in outputs {
                    match o {
                        AnyOutput::Int(x) => {
                            ints.insert(*p, *x);
                        }
                        AnyOutput::List(_) => return Err(format!("{p} produced a list output")),
                    }
                }
                check_epsilon_outputs(inputs.values().copied(), &ints)
            }
            AnyProtocol::Flood(_) => {
                for (p, o) in outputs {
                    let AnyOutput::List(xs) = o else { return Err(format!("{p} produced a scalar output")) };
                    if let Some(x) = xs.iter().find(|x| !inputs.values().any(|i| i == *x)) {
                        return Err(format!("{p} output contains {x}, which no processor had as input"));
                    }
                }
                Ok(())
            }
        }
    }
}

/// A run of the benign synchronous model: round-1 inputs of the
/// participating processors, then for every later round the set of senders
/// each processor hears from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BenignRun {
    pub n: usize,
    pub inputs: BTreeMap<ProcessorId, i64>,
    pub schedule: BTreeMap<u32, BTreeMap<ProcessorId, ProcSet>>,
}

#[derive(Clone, Debug)]
pub struct OracleRun<P: SyncProtocol> {
    /// `states[r][p]` is `p`'s state after round `r`.
    pub states: BTreeMap<u32, BTreeMap<ProcessorId, P::State>>,
    pub outputs: BTreeMap<ProcessorId, P::Output>,
}

/// Executes `proto` directly in the benign model. Processors absent from a
/// round's schedule take no step in that round or later.
pub fn benign_oracle_run<P: SyncProtocol>(
    proto: &P,
    run: &BenignRun,
    c: &BadSetCollection,
    mode: Mode,
) -> Result<OracleRun<P>> {
    let mut states = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    let mut first = BTreeMap::new();
    for (&p, &x) in &run.inputs {
        if p.index() >= run.n {
            return Err(Error::UnknownProcessor(p, run.n));
        }
        let (s, o) = proto.initial(p, x)?;
        if let Some(o) = o {
            outputs.insert(p, o);
        }
        first.insert(p, s);
    }
    states.insert(1, first);

    for (&r, recv) in &run.schedule {
        if r < 2 {
            return Err(Error::InvalidSchedule(format!("round {r} cannot be scheduled; round 1 is the inputs")));
        }
        let Some(prev) = states.get(&(r - 1)) else {
            return Err(Error::InvalidSchedule(format!("round {r} scheduled after a gap")));
        };
        let live: ProcSet = prev.keys().copied().collect();
        if mode == Mode::Bimo && !recv.is_empty() {
            let common = recv.values().fold(ProcSet::universe(run.n), |acc, s| acc.intersection(*s));
            if !c.contains_good_set(common) {
                return Err(Error::InvalidSchedule(format!("round {r}: common part {common} holds no good set")));
            }
        }
        let mut next = BTreeMap::new();
        for (&p, &heard) in recv {
            let Some(sp) = prev.get(&p) else {
                return Err(Error::InvalidSchedule(format!("round {r}: {p} has no round {} state", r - 1)));
            };
            if !heard.is_subset(live) {
                return Err(Error::InvalidSchedule(format!("round {r}: {p} hears {heard}, live set is {live}")));
            }
            if !c.contains_good_set(heard) {
                return Err(Error::InvalidSchedule(format!("round {r}: {p} hears {heard}, no good set")));
            }
            let mut got = BTreeMap::new();
            for q in heard.iter() {
                if let Some(m) = proto.outgoing(&prev[&q]).remove(&p) {
                    got.insert(q, m);
                }
            }
            let (s, o) = proto.transition(p, &got, sp, r);
            if let Some(o) = o {
                outputs.entry(p).or_insert(o);
            }
            next.insert(p, s);
        }
        states.insert(r, next);
    }
    Ok(OracleRun { states, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u8) -> ProcessorId {
        ProcessorId(i)
    }

    fn full_schedule(n: usize, rounds: std::ops::RangeInclusive<u32>) -> BTreeMap<u32, BTreeMap<ProcessorId, ProcSet>> {
        rounds.map(|r| (r, (0..n).map(|q| (ProcessorId::from(q), ProcSet::universe(n))).collect())).collect()
    }

    fn inputs(xs: &[i64]) -> BTreeMap<ProcessorId, i64> {
        xs.iter().enumerate().map(|(i, x)| (ProcessorId::from(i), *x)).collect()
    }

    #[test]
    fn round_counts() {
        assert_eq!(EpsilonAgreement::new(4, 0, 16).unwrap().rounds(), 5);
        assert_eq!(EpsilonAgreement::new(4, 0, 17).unwrap().rounds(), 6);
        assert_eq!(EpsilonAgreement::new(4, 3, 4).unwrap().rounds(), 1);
        assert_eq!(EpsilonAgreement::new(4, 0, 2).unwrap().rounds(), 2);
        assert!(EpsilonAgreement::new(4, 4, 4).is_err());
    }

    #[test]
    fn input_outside_interval_rejected() {
        let e = EpsilonAgreement::new(4, 0, 16).unwrap();
        assert!(matches!(e.initial(p(0), 17), Err(Error::InvalidInput(_))));
        assert!(e.initial(p(0), 16).is_ok());
    }

    #[test]
    fn equal_inputs_give_equal_outputs() {
        let e = EpsilonAgreement::new(4, 0, 16).unwrap();
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let run = BenignRun { n: 4, inputs: inputs(&[5, 5, 5, 5]), schedule: full_schedule(4, 2..=5) };
        let out = benign_oracle_run(&e, &run, &c, Mode::Bisynch).unwrap();
        assert_eq!(out.outputs.values().copied().collect::<Vec<_>>(), vec![5; 4]);
    }

    #[test]
    fn midpoint_after_one_round() {
        let e = EpsilonAgreement::new(4, 0, 16).unwrap();
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let run = BenignRun { n: 4, inputs: inputs(&[3, 7, 3, 7]), schedule: full_schedule(4, 2..=5) };
        let out = benign_oracle_run(&e, &run, &c, Mode::Bisynch).unwrap();
        for s in out.states[&2].values() {
            assert_eq!(s.value, Rational::from_integer(5));
        }
        assert_eq!(out.outputs.values().copied().collect::<Vec<_>>(), vec![5; 4]);
    }

    #[test]
    fn flood_outputs() {
        let f = Flood::new(4);
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let run = BenignRun { n: 4, inputs: inputs(&[4, 1, 3, 2]), schedule: full_schedule(4, 2..=2) };
        let out = benign_oracle_run(&f, &run, &c, Mode::Bisynch).unwrap();
        assert!(out.outputs.values().all(|o| *o == vec![1, 2, 3, 4]));

        let mut sched = full_schedule(4, 2..=2);
        for heard in sched.get_mut(&2).unwrap().values_mut() {
            heard.remove(p(3));
        }
        let out = benign_oracle_run(&f, &BenignRun { schedule: sched, ..run.clone() }, &c, Mode::Bisynch).unwrap();
        assert!(out.outputs.values().all(|o| *o == vec![1, 3, 4]));

        let mut sched = full_schedule(4, 2..=2);
        sched.get_mut(&2).unwrap().insert(p(0), ProcSet::from([0, 1, 2]));
        let out = benign_oracle_run(&f, &BenignRun { schedule: sched, ..run }, &c, Mode::Bisynch).unwrap();
        assert_ne!(out.outputs[&p(0)], out.outputs[&p(1)]);
    }

    #[test]
    fn schedule_without_good_set_rejected() {
        let f = Flood::new(4);
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let mut sched = full_schedule(4, 2..=2);
        sched.get_mut(&2).unwrap().insert(p(0), ProcSet::from([0, 1]));
        let run = BenignRun { n: 4, inputs: inputs(&[1, 2, 3, 4]), schedule: sched };
        assert!(matches!(benign_oracle_run(&f, &run, &c, Mode::Bisynch), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn bimo_schedule_needs_common_good_set() {
        let f = Flood::new(4);
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let mut sched = full_schedule(4, 2..=2);
        let row = sched.get_mut(&2).unwrap();
        row.insert(p(0), ProcSet::from([0, 1, 2]));
        row.insert(p(1), ProcSet::from([1, 2, 3]));
        let run = BenignRun { n: 4, inputs: inputs(&[1, 2, 3, 4]), schedule: sched };
        assert!(benign_oracle_run(&f, &run, &c, Mode::Bisynch).is_ok());
        assert!(benign_oracle_run(&f, &run, &c, Mode::Bimo).is_err());
    }

    #[test]
    fn epsilon_output_check() {
        let outs: BTreeMap<_, _> = [(p(0), 4), (p(1), 5)].into();
        assert!(check_epsilon_outputs([3, 7], &outs).is_ok());
        let far: BTreeMap<_, _> = [(p(0), 3), (p(1), 5)].into();
        assert!(check_epsilon_outputs([3, 7], &far).is_err());
        let outside: BTreeMap<_, _> = [(p(0), 8)].into();
        assert!(check_epsilon_outputs([3, 7], &outside).is_err());
    }

    #[test]
    fn any_protocol_dispatch_matches_direct() {
        let cfg = ProtocolConfig::EpsilonAgreement { lo: 0, hi: 16 };
        let any = AnyProtocol::from_config(&cfg, 4).unwrap();
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let run = BenignRun { n: 4, inputs: inputs(&[0, 16, 9, 2]), schedule: full_schedule(4, 2..=5) };
        let a = benign_oracle_run(&any, &run, &c, Mode::Bisynch).unwrap();
        let d = benign_oracle_run(&EpsilonAgreement::new(4, 0, 16).unwrap(), &run, &c, Mode::Bisynch).unwrap();
        for (q, o) in d.outputs {
            assert_eq!(a.outputs[&q], AnyOutput::Int(o));
        }
        assert_eq!(serde_json::to_string(&cfg).unwrap(), r#"{"name":"epsilon-agreement","lo":0,"hi":16}"#);
    }
}
