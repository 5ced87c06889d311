//! Post-hoc property checks over a recorded trace.
//!
//! Safety properties are PASS or FAIL on any trace. Eventualities ("every
//! processor eventually ...") are checked only on complete traces, where
//! every pending message was delivered; on an incomplete trace a missing
//! event yields VACUOUS instead of FAIL. A property whose premise never
//! arises in the trace is VACUOUS.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::engine::{Mode, SyncProtocol};
use crate::error::Result;
use crate::message::{CoKey, RbKey, Value};
use crate::protocols::{benign_oracle_run, AnyOutput, AnyProtocol, BenignRun};
use crate::trace::{Event, Trace, TraceHeader};

/// Report ids in output order.
pub const PROPERTY_IDS: &[&str] = &[
    "RB1",
    "RB2",
    "RB3",
    "RRB1",
    "RRB2",
    "RRB3",
    "RRB4",
    "CO1",
    "CO2",
    "CO3",
    "CC",
    "CC_TERM",
    "CC_TABLE",
    "REPLICA",
    "NET_NOFORGE",
    "NET_FAIRNESS",
    "NET_RECOVERY",
    "CUCKOO",
];

/// Upper bound on oracle runs in the replacement search.
pub const CUCKOO_SEARCH_CAP: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Vacuous,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Vacuous => "VACUOUS",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// Trace seq of the violating (or decisive) event, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub detail: String,
    /// Replaced inputs of a satisfying benign run.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub assignment: BTreeMap<ProcessorId, i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl PropertyReport {
    fn new(id: &str, verdict: Verdict, witness: Option<Witness>) -> Self {
        PropertyReport { id: id.to_string(), verdict, witness }
    }

    pub fn pass(id: &str) -> Self {
        Self::new(id, Verdict::Pass, None)
    }

    pub fn vacuous(id: &str, detail: &str) -> Self {
        Self::new(
            id,
            Verdict::Vacuous,
            Some(Witness { seq: None, detail: detail.to_string(), assignment: BTreeMap::new() }),
        )
    }

    pub fn fail(id: &str, seq: Option<u64>, detail: String) -> Self {
        Self::new(id, Verdict::Fail, Some(Witness { seq, detail, assignment: BTreeMap::new() }))
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<13} {}", self.id, self.verdict)?;
        if let Some(w) = &self.witness {
            match w.seq {
                Some(s) => write!(f, "  [seq {s}] {}", w.detail)?,
                None => write!(f, "  {}", w.detail)?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub complete: bool,
    pub properties: Vec<PropertyReport>,
}

impl Report {
    pub fn get(&self, id: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.id == id)
    }

    pub fn verdict(&self, id: &str) -> Option<Verdict> {
        self.get(id).map(|p| p.verdict)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyReport> {
        self.properties.iter().filter(|p| p.verdict == Verdict::Fail)
    }

    pub fn is_inconclusive(&self) -> bool {
        self.properties.iter().any(|p| p.verdict == Verdict::Inconclusive)
    }

    pub fn has_failure(&self) -> bool {
        self.failures().next().is_some()
    }

    /// Keeps only the listed ids.
    pub fn retain(&mut self, ids: &[String]) {
        self.properties.retain(|p| ids.iter().any(|i| i.eq_ignore_ascii_case(&p.id)));
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (seed {}, {})", self.name, self.seed, if self.complete { "complete" } else { "incomplete" })?;
        for p in &self.properties {
            writeln!(f, "  {p}")?;
        }
        Ok(())
    }
}

/// Runs every check that applies to the trace. Layers absent from the run
/// are left out of the report: the replicated layers without a protocol,
/// the common core outside BIMO, recovery without controlled processors.
pub fn check_trace(trace: &Trace) -> Result<Report> {
    let ix = Index::build(trace)?;
    let h = &trace.header;
    let bimo = h.mode == Some(Mode::Bimo);
    let ran_core = trace.events.iter().any(|e| matches!(e.event, Event::Cc1 { .. }));
    let mut properties = check_broadcast_properties(&ix);
    properties.extend(check_cosend_properties(&ix));
    if bimo || ran_core {
        properties.push(check_common_core(&ix));
        properties.push(check_core_termination(&ix));
        properties.push(check_core_table(&ix));
    }
    properties.push(check_replica_agreement(&ix));
    properties.extend(check_network(&ix));
    if h.protocol.is_some() {
        properties.push(check_cuckoo(&ix));
    }
    if h.protocol.is_none() {
        properties.retain(|p| !p.id.starts_with("RRB") && !p.id.starts_with("CO") && p.id != "REPLICA");
    }
    // recovery properties only apply when someone can recover
    if h.controlled.is_empty() {
        properties.retain(|p| p.id != "RRB4" && p.id != "NET_RECOVERY");
    }
    Ok(Report { name: trace.header.name.clone(), seed: trace.header.seed, complete: ix.complete, properties })
}

type Seen<K> = BTreeMap<K, Vec<(u64, ProcessorId, Value)>>;
type Accepted = (u64, u32, Value);

/// Trace facts shared by the checks.
struct Index<'a> {
    trace: &'a Trace,
    h: &'a TraceHeader,
    c: BadSetCollection,
    live: ProcSet,
    complete: bool,
    recover_seq: BTreeMap<ProcessorId, u64>,
    rb_invoke: Seen<RbKey>,
    rb_accept: Seen<RbKey>,
    recrb_invoke: Seen<CoKey>,
    recrb_accept: Seen<CoKey>,
    co_accept: Seen<CoKey>,
}

impl<'a> Index<'a> {
    fn build(trace: &'a Trace) -> Result<Self> {
        let h = &trace.header;
        let c = h.collection()?;
        let mut ix = Index {
            trace,
            h,
            c,
            live: h.live(),
            complete: trace.complete(),
            recover_seq: BTreeMap::new(),
            rb_invoke: BTreeMap::new(),
            rb_accept: BTreeMap::new(),
            recrb_invoke: BTreeMap::new(),
            recrb_accept: BTreeMap::new(),
            co_accept: BTreeMap::new(),
        };
        for e in &trace.events {
            let s = e.seq;
            match &e.event {
                Event::Recover { actor } => {
                    ix.recover_seq.entry(*actor).or_insert(s);
                }
                Event::InvokeRb { actor, key, value } => {
                    ix.rb_invoke.entry(*key).or_default().push((s, *actor, value.clone()))
                }
                Event::AcceptRb { actor, key, value } => {
                    ix.rb_accept.entry(*key).or_default().push((s, *actor, value.clone()))
                }
                Event::InvokeRecrb { actor, ctx, value } => {
                    ix.recrb_invoke.entry(*ctx).or_default().push((s, *actor, value.clone()))
                }
                Event::AcceptRecrb { actor, ctx, value } => {
                    ix.recrb_accept.entry(*ctx).or_default().push((s, *actor, value.clone()))
                }
                Event::AcceptCosend { actor, ctx, value } => {
                    ix.co_accept.entry(*ctx).or_default().push((s, *actor, value.clone()))
                }
                _ => {}
            }
        }
        Ok(ix)
    }

    /// `p` is outside the adversary's control at trace position `seq`.
    fn correct_at(&self, p: ProcessorId, seq: u64) -> bool {
        !self.h.controlled.contains(p) || self.recover_seq.get(&p).is_some_and(|r| *r < seq)
    }

    fn n(&self) -> usize {
        self.h.n
    }

    /// Checks that every live processor accepted `key`; reports the first
    /// missing one.
    fn missing<K: Ord>(&self, accepts: &Seen<K>, key: &K) -> Option<ProcessorId> {
        let got: ProcSet = accepts.get(key).map(|v| v.iter().map(|(_, p, _)| *p).collect()).unwrap_or_default();
        self.live.difference(got).iter().next()
    }
}

/// Outcome accumulator: first FAIL wins; otherwise an unmet eventuality on
/// an incomplete trace makes the result VACUOUS.
struct Acc {
    id: &'static str,
    fail: Option<PropertyReport>,
    premise: bool,
    pending: Option<String>,
}

impl Acc {
    fn new(id: &'static str) -> Self {
        Acc { id, fail: None, premise: false, pending: None }
    }

    fn fail(&mut self, seq: Option<u64>, detail: String) {
        if self.fail.is_none() {
            self.fail = Some(PropertyReport::fail(self.id, seq, detail));
        }
    }

    /// An eventuality is unmet at trace end.
    fn unmet(&mut self, complete: bool, seq: Option<u64>, detail: String) {
        if complete {
            self.fail(seq, detail);
        } else if self.pending.is_none() {
            self.pending = Some(detail);
        }
    }

    fn finish(self, vacuous_reason: &str) -> PropertyReport {
        if let Some(f) = self.fail {
            return f;
        }
        if !self.premise {
            return PropertyReport::vacuous(self.id, vacuous_reason);
        }
        match self.pending {
            Some(d) => PropertyReport::vacuous(self.id, &format!("run incomplete: {d}")),
            None => PropertyReport::pass(self.id),
        }
    }

    /// Like `finish`, but PASS when the premise never arose (pure safety).
    fn finish_safety(self) -> PropertyReport {
        match self.fail {
            Some(f) => f,
            None => PropertyReport::pass(self.id),
        }
    }
}

/// Validity: instances invoked by a sender satisfying `qualifies` are
/// accepted everywhere (with the invoked value when `same_value`).
fn validity<K: Ord + Copy + fmt::Debug>(
    ix: &Index,
    id: &'static str,
    invokes: &Seen<K>,
    accepts: &Seen<K>,
    origin: impl Fn(&K) -> ProcessorId,
    qualifies: impl Fn(&K, u64) -> bool,
    same_value: bool,
) -> Acc {
    let mut acc = Acc::new(id);
    for (key, inv) in invokes {
        let Some((seq, _, v)) = inv.iter().find(|(_, a, _)| *a == origin(key)) else { continue };
        if !qualifies(key, *seq) {
            continue;
        }
        acc.premise = true;
        if same_value {
            for (s, p, w) in accepts.get(key).into_iter().flatten() {
                if w != v {
                    acc.fail(Some(*s), format!("{p} accepted {w} for {key:?}, sender invoked {v}"));
                }
            }
        }
        if let Some(p) = ix.missing(accepts, key) {
            acc.unmet(ix.complete, Some(*seq), format!("{p} never accepted {key:?}"));
        }
    }
    acc
}

/// Agreement: accepted values of one instance coincide, each processor
/// accepts once, and everyone accepts.
fn agreement<K: Ord + Copy + fmt::Debug>(ix: &Index, id: &'static str, accepts: &Seen<K>) -> Acc {
    let mut acc = Acc::new(id);
    for (key, list) in accepts {
        acc.premise = true;
        let (s0, p0, v0) = &list[0];
        let mut seen = ProcSet::EMPTY;
        for (s, p, v) in list {
            if v != v0 {
                acc.fail(Some(*s), format!("{p} accepted {v} for {key:?} but {p0} accepted {v0} at seq {s0}"));
            }
            if !seen.insert(*p) {
                acc.fail(Some(*s), format!("{p} accepted {key:?} twice"));
            }
        }
        if let Some(p) = ix.missing(accepts, key) {
            acc.unmet(ix.complete, Some(*s0), format!("{p} never accepted {key:?}"));
        }
    }
    acc
}

/// Integrity: nothing is accepted for an instance its sender never invoked.
fn integrity<K: Ord + Copy + fmt::Debug>(
    id: &'static str,
    invokes: &Seen<K>,
    accepts: &Seen<K>,
    origin: impl Fn(&K) -> ProcessorId,
) -> Acc {
    let mut acc = Acc::new(id);
    for (key, list) in accepts {
        let inv = invokes.get(key).and_then(|v| v.iter().find(|(_, a, _)| *a == origin(key)).map(|(s, _, _)| *s));
        for (s, p, _) in list {
            if !inv.is_some_and(|i| i < *s) {
                acc.fail(Some(*s), format!("{p} accepted {key:?}, which its sender never invoked"));
            }
        }
    }
    acc
}

pub fn check_broadcast_properties_of(trace: &Trace) -> Result<Vec<PropertyReport>> {
    Ok(check_broadcast_properties(&Index::build(trace)?))
}

fn check_broadcast_properties(ix: &Index) -> Vec<PropertyReport> {
    let rb_origin = |k: &RbKey| k.origin;
    let co_sender = |k: &CoKey| k.sender;
    let correct = |p: ProcessorId, s: u64| ix.correct_at(p, s) && ix.live.contains(p);
    vec![
        validity(ix, "RB1", &ix.rb_invoke, &ix.rb_accept, rb_origin, |k, s| correct(k.origin, s), true)
            .finish("no correct sender invoked RB"),
        agreement(ix, "RB2", &ix.rb_accept).finish("no RB was accepted"),
        integrity("RB3", &ix.rb_invoke, &ix.rb_accept, rb_origin).finish_safety(),
        validity(ix, "RRB1", &ix.recrb_invoke, &ix.recrb_accept, co_sender, |k, s| correct(k.sender, s), true)
            .finish("no correct sender invoked RecRB"),
        agreement(ix, "RRB2", &ix.recrb_accept).finish("no RecRB was accepted"),
        integrity("RRB3", &ix.recrb_invoke, &ix.recrb_accept, co_sender).finish_safety(),
        validity(
            ix,
            "RRB4",
            &ix.recrb_invoke,
            &ix.recrb_accept,
            co_sender,
            |k, s| !ix.correct_at(k.sender, s) && ix.recover_seq.contains_key(&k.sender),
            false,
        )
        .finish("no sender recovered after invoking RecRB"),
    ]
}

fn check_cosend_properties(ix: &Index) -> Vec<PropertyReport> {
    // CO1: correct senders' sequences are accepted in order, unaltered.
    let mut co1 = Acc::new("CO1");
    let mut invoked: BTreeMap<ProcessorId, BTreeMap<u32, Value>> = BTreeMap::new();
    for (ctx, list) in &ix.recrb_invoke {
        for (_, a, v) in list {
            if *a == ctx.sender && ix.h.correct().contains(*a) {
                invoked.entry(*a).or_default().insert(ctx.round, v.clone());
            }
        }
    }
    // (acceptor, sender) -> (seq, round, value) in trace order
    let mut accepted_by: BTreeMap<(ProcessorId, ProcessorId), Vec<Accepted>> = BTreeMap::new();
    for e in &ix.trace.events {
        if let Event::AcceptCosend { actor, ctx, value } = &e.event {
            accepted_by.entry((*actor, ctx.sender)).or_default().push((e.seq, ctx.round, value.clone()));
        }
    }
    for (s, rounds) in &invoked {
        co1.premise = true;
        for p in ix.live.iter() {
            let seq = accepted_by.get(&(p, *s)).map(Vec::as_slice).unwrap_or(&[]);
            for w in seq.windows(2) {
                if w[1].1 <= w[0].1 {
                    co1.fail(Some(w[1].0), format!("{p} accepted round {} of {s} after round {}", w[1].1, w[0].1));
                }
            }
            for (seqno, r, v) in seq {
                if rounds.get(r) != Some(v) {
                    co1.fail(Some(*seqno), format!("{p} accepted {v} as round {r} of correct {s}"));
                }
            }
            for r in rounds.keys() {
                if !seq.iter().any(|(_, rr, _)| rr == r) {
                    co1.unmet(ix.complete, None, format!("{p} never accepted round {r} of {s}"));
                }
            }
        }
    }

    // CO2: causal predecessors accepted first.
    let mut co2 = Acc::new("CO2");
    let mut accepted: BTreeSet<(ProcessorId, u32, ProcessorId)> = BTreeSet::new();
    for e in &ix.trace.events {
        let Event::AcceptCosend { actor, ctx, value } = &e.event else { continue };
        if ctx.round > 1 {
            co2.premise = true;
            match value.as_ids() {
                None => co2.fail(Some(e.seq), format!("{actor} accepted non-id-set {value} in round {}", ctx.round)),
                Some(ids) => {
                    if !ids.contains(ctx.sender) {
                        co2.fail(
                            Some(e.seq),
                            format!("{actor} accepted {value} from {} lacking its sender", ctx.sender),
                        );
                    }
                    if let Some(q) = ids.iter().find(|q| !accepted.contains(&(*actor, ctx.round - 1, *q))) {
                        co2.fail(
                            Some(e.seq),
                            format!(
                                "{actor} accepted round {} of {} before round {} of {q}",
                                ctx.round,
                                ctx.sender,
                                ctx.round - 1
                            ),
                        );
                    }
                }
            }
        }
        accepted.insert((*actor, ctx.round, ctx.sender));
    }

    let co3 = agreement(ix, "CO3", &ix.co_accept);
    vec![
        co1.finish("no correct sender used co_send"),
        co2.finish("no co_send beyond round 1 was accepted"),
        co3.finish("nothing accepted via co_send"),
    ]
}

fn check_common_core(ix: &Index) -> PropertyReport {
    let mut acc = Acc::new("CC");
    let mut per_round: BTreeMap<u32, Vec<(u64, ProcessorId, ProcSet)>> = BTreeMap::new();
    for e in &ix.trace.events {
        if let Event::CcDone { actor, round, snapshot, set } = &e.event {
            acc.premise = true;
            if !snapshot.is_subset(*set) {
                acc.fail(
                    Some(e.seq),
                    format!("{actor} round {round}: result {set} misses part of its input {snapshot}"),
                );
            }
            per_round.entry(*round).or_default().push((e.seq, *actor, *set));
        }
    }
    for (r, list) in &per_round {
        let common = list.iter().fold(ProcSet::universe(ix.n()), |a, (_, _, s)| a.intersection(*s));
        if !ix.c.contains_good_set(common) {
            let last = list.last().map(|(s, _, _)| *s);
            acc.fail(last, format!("round {r}: results share only {common}"));
        }
    }
    acc.finish("no common core completed")
}

fn check_core_termination(ix: &Index) -> PropertyReport {
    let mut acc = Acc::new("CC_TERM");
    let mut started: BTreeMap<(ProcessorId, u32), u64> = BTreeMap::new();
    let mut done: BTreeSet<(ProcessorId, u32)> = BTreeSet::new();
    let mut halted_at: BTreeMap<ProcessorId, u32> = BTreeMap::new();
    for e in &ix.trace.events {
        match &e.event {
            Event::Cc1 { actor, round, .. } => {
                started.entry((*actor, *round)).or_insert(e.seq);
            }
            Event::CcDone { actor, round, .. } => {
                done.insert((*actor, *round));
            }
            Event::SmOutput { actor, replica, round, .. } if actor == replica => {
                halted_at.entry(*actor).or_insert(*round);
            }
            _ => {}
        }
    }
    let rounds: BTreeSet<u32> = started.keys().map(|(_, r)| *r).collect();
    for r in rounds {
        acc.premise = true;
        for p in ix.h.correct().iter() {
            if halted_at.get(&p).is_some_and(|h| *h <= r) {
                continue;
            }
            if !done.contains(&(p, r)) {
                let seq = started.get(&(p, r)).copied();
                acc.unmet(ix.complete, seq, format!("{p} never finished the common core of round {r}"));
            }
        }
    }
    acc.finish("no common core started")
}

/// Counting argument behind commonality: among correct processors, the
/// step-one tables have at least `t+1` ones per row and some column with
/// at least `t+1` ones.
fn check_core_table(ix: &Index) -> PropertyReport {
    let id = "CC_TABLE";
    let Some(t) = ix.c.threshold_t() else {
        return PropertyReport::vacuous(id, "collection is not a threshold collection");
    };
    let g = ix.h.correct();
    let mut rows: BTreeMap<u32, BTreeMap<ProcessorId, (u64, ProcSet)>> = BTreeMap::new();
    for e in &ix.trace.events {
        if let Event::Cc2 { actor, round, counted, .. } = &e.event {
            if g.contains(*actor) {
                rows.entry(*round).or_default().insert(*actor, (e.seq, *counted));
            }
        }
    }
    let mut acc = Acc::new(id);
    for (r, table) in &rows {
        if table.len() != g.len() {
            continue;
        }
        acc.premise = true;
        let mut column = vec![0usize; ix.n()];
        let mut ones = 0;
        for (p, (seq, counted)) in table {
            let row = counted.intersection(g);
            if row.len() < t + 1 {
                acc.fail(Some(*seq), format!("round {r}: {p} counted only {row} among correct processors"));
            }
            ones += row.len();
            for q in row.iter() {
                column[q.index()] += 1;
            }
        }
        if ones < g.len() * (t + 1) {
            acc.fail(None, format!("round {r}: {ones} ones, fewer than {}", g.len() * (t + 1)));
        }
        if !column.iter().any(|c| *c > t) {
            acc.fail(None, format!("round {r}: no column holds {} ones", t + 1));
        }
    }
    acc.finish("no round where every correct processor finished step one")
}

fn check_replica_agreement(ix: &Index) -> PropertyReport {
    let mut acc = Acc::new("REPLICA");
    let mut digests: BTreeMap<(ProcessorId, u32), (u64, ProcessorId, String)> = BTreeMap::new();
    let mut outputs: BTreeMap<ProcessorId, (u64, ProcessorId, serde_json::Value)> = BTreeMap::new();
    for e in &ix.trace.events {
        let (actor, replica, round, digest) = match &e.event {
            Event::SmInit { actor, replica, digest, .. } => (*actor, *replica, 1, digest),
            Event::SmStep { actor, replica, round, digest, .. } => (*actor, *replica, *round, digest),
            Event::SmOutput { actor, replica, output, .. } => {
                acc.premise = true;
                match outputs.get(replica) {
                    Some((s0, a0, o0)) if o0 != output => acc.fail(
                        Some(e.seq),
                        format!("{actor} saw replica {replica} output {output}, {a0} saw {o0} (seq {s0})"),
                    ),
                    Some(_) => {}
                    None => {
                        outputs.insert(*replica, (e.seq, *actor, output.clone()));
                    }
                }
                continue;
            }
            _ => continue,
        };
        acc.premise = true;
        match digests.get(&(replica, round)) {
            Some((s0, a0, d0)) if d0 != digest => acc.fail(
                Some(e.seq),
                format!("replica {replica} round {round}: {actor} has {digest}, {a0} had {d0} (seq {s0})"),
            ),
            Some(_) => {}
            None => {
                digests.insert((replica, round), (e.seq, actor, digest.clone()));
            }
        }
    }
    acc.finish("no replica steps recorded")
}

fn check_network(ix: &Index) -> Vec<PropertyReport> {
    let mut forge = Acc::new("NET_NOFORGE");
    let mut fair = Acc::new("NET_FAIRNESS");
    let mut recov = Acc::new("NET_RECOVERY");
    let mut sends: BTreeMap<u64, (u64, ProcessorId, ProcessorId)> = BTreeMap::new();
    let mut dropped: BTreeSet<u64> = BTreeSet::new();
    let mut delivered: BTreeSet<u64> = BTreeSet::new();
    let mut outputs = ProcSet::EMPTY;
    let mut recovered = ProcSet::EMPTY;
    for e in &ix.trace.events {
        match &e.event {
            Event::Send { env, from, to, .. } => {
                forge.premise = true;
                fair.premise = true;
                sends.insert(*env, (e.seq, *from, *to));
            }
            Event::Drop { env, from, .. } | Event::Tamper { env, from, .. } => {
                if matches!(e.event, Event::Drop { .. }) {
                    dropped.insert(*env);
                }
                if recovered.contains(*from) {
                    recov.fail(Some(e.seq), format!("adversary acted on {from} after it recovered"));
                }
                if !ix.h.controlled.contains(*from) {
                    recov.fail(Some(e.seq), format!("adversary acted on uncontrolled {from}"));
                }
            }
            Event::Deliver { env, from, to } => match sends.get(env) {
                Some((_, f, t)) if f == from && t == to => {
                    if dropped.contains(env) {
                        forge.fail(Some(e.seq), format!("dropped envelope {env} was delivered"));
                    }
                    if !delivered.insert(*env) {
                        forge.fail(Some(e.seq), format!("envelope {env} delivered twice"));
                    }
                }
                _ => forge.fail(Some(e.seq), format!("delivery of envelope {env} {from}->{to} matches no send")),
            },
            Event::Output { actor, .. } => {
                outputs.insert(*actor);
            }
            Event::Recover { actor } => {
                recov.premise = true;
                if !ix.c.contains_good_set(outputs) {
                    recov.fail(Some(e.seq), format!("{actor} recovered while only {outputs} had output"));
                }
                if !ix.h.controlled.contains(*actor) || !recovered.insert(*actor) {
                    recov.fail(Some(e.seq), format!("{actor} recovered twice or was never controlled"));
                }
            }
            _ => {}
        }
    }
    for (env, (seq, from, to)) in &sends {
        if !dropped.contains(env) && !delivered.contains(env) {
            fair.unmet(ix.complete, Some(*seq), format!("envelope {env} {from}->{to} never delivered"));
            break;
        }
    }
    vec![forge.finish("no messages sent"), fair.finish("no messages sent"), recov.finish("no processor recovered")]
}

/// Searches for a benign run that reproduces the trace's outputs after
/// replacing the inputs of at most one bad set. The schedule is the one the
/// trace itself accepted: replica `i`'s round-`r` received set is the id-set
/// `⟨r, p_i⟩` carried.
pub fn check_cuckoo_equivalence(trace: &Trace) -> PropertyReport {
    match Index::build(trace) {
        Ok(ix) => check_cuckoo(&ix),
        Err(e) => PropertyReport::fail("CUCKOO", None, format!("unreadable trace: {e}")),
    }
}

fn check_cuckoo(ix: &Index) -> PropertyReport {
    let id = "CUCKOO";
    let h = ix.h;
    let Some(cfg) = &h.protocol else { return PropertyReport::vacuous(id, "no protocol in trace") };
    let proto = match AnyProtocol::from_config(cfg, h.n) {
        Ok(p) => p,
        Err(e) => return PropertyReport::fail(id, None, format!("protocol config: {e}")),
    };
    let mode = h.mode.unwrap_or(Mode::Bisynch);

    let mut outputs: BTreeMap<ProcessorId, (u64, serde_json::Value)> = BTreeMap::new();
    let mut effective: BTreeMap<ProcessorId, i64> = BTreeMap::new();
    let mut schedule: BTreeMap<u32, BTreeMap<ProcessorId, ProcSet>> = BTreeMap::new();
    for e in &ix.trace.events {
        match &e.event {
            Event::Output { actor, output } => {
                outputs.entry(*actor).or_insert((e.seq, output.clone()));
            }
            Event::SmInit { replica, input, .. } => {
                effective.entry(*replica).or_insert(*input);
            }
            Event::SmStep { replica, round, pi, .. } => {
                schedule.entry(*round).or_default().entry(*replica).or_insert(*pi);
            }
            _ => {}
        }
    }
    if outputs.is_empty() {
        return PropertyReport::vacuous(id, "no outputs");
    }
    if !ix.complete && !h.live().iter().all(|p| outputs.contains_key(&p)) {
        return PropertyReport::vacuous(id, "run incomplete before every processor output");
    }
    let mut typed = BTreeMap::new();
    for (p, (seq, o)) in &outputs {
        match serde_json::from_value::<AnyOutput>(o.clone()) {
            Ok(v) => {
                typed.insert(*p, v);
            }
            Err(_) => return PropertyReport::fail(id, Some(*seq), format!("{p} output {o} has the wrong shape")),
        }
    }

    // Shortcut: the task itself, against the inputs that were actually
    // accepted in round 1.
    if let Err(why) = proto.check_outputs(&effective, &typed) {
        let seq = outputs.values().map(|(s, _)| *s).max();
        return PropertyReport::fail(id, seq, format!("no benign run yields these outputs: {why}"));
    }

    let participants: Vec<ProcessorId> = effective.keys().copied().collect();
    let base: BTreeMap<ProcessorId, i64> =
        participants.iter().map(|p| (*p, h.inputs.get(p).copied().unwrap_or(effective[p]))).collect();

    let reproduces = |inputs: &BTreeMap<ProcessorId, i64>| -> bool {
        let run = BenignRun { n: h.n, inputs: inputs.clone(), schedule: schedule.clone() };
        match benign_oracle_run(&proto, &run, &ix.c, mode) {
            Ok(out) => typed.iter().all(|(p, o)| out.outputs.get(p) == Some(o)),
            Err(_) => false,
        }
    };
    let witness = |inputs: &BTreeMap<ProcessorId, i64>| -> PropertyReport {
        let assignment: BTreeMap<ProcessorId, i64> =
            inputs.iter().filter(|(p, x)| base.get(p) != Some(x)).map(|(p, x)| (*p, *x)).collect();
        let detail = if assignment.is_empty() {
            "no inputs replaced".to_string()
        } else {
            let parts: Vec<String> = assignment.iter().map(|(p, x)| format!("{p}:{}->{x}", base[p])).collect();
            format!("replaced {}", parts.join(", "))
        };
        PropertyReport::new(id, Verdict::Pass, Some(Witness { seq: None, detail, assignment }))
    };

    // Direct candidate: the inputs the replicas were started with.
    let changed: ProcSet = effective.iter().filter(|(p, x)| base.get(p) != Some(x)).map(|(p, _)| *p).collect();
    if ix.c.is_bad(changed) && reproduces(&effective) {
        return witness(&effective);
    }

    let seen = effective.values().chain(h.inputs.values()).copied();
    let domain = proto.candidate_domain(seen);
    let pset: ProcSet = participants.iter().copied().collect();
    let blocks: Vec<Vec<ProcessorId>> =
        ix.c.maximal_sets().iter().map(|b| b.intersection(pset).iter().collect()).collect();
    let size: u128 = blocks.iter().map(|b| (domain.len() as u128).saturating_pow(b.len() as u32)).sum();
    if size > CUCKOO_SEARCH_CAP {
        return PropertyReport {
            id: id.to_string(),
            verdict: Verdict::Inconclusive,
            witness: Some(Witness {
                seq: None,
                detail: format!("search space {size} exceeds {CUCKOO_SEARCH_CAP}"),
                assignment: BTreeMap::new(),
            }),
        };
    }
    for block in &blocks {
        let mut digits = vec![0usize; block.len()];
        loop {
            let mut inputs = base.clone();
            for (p, d) in block.iter().zip(&digits) {
                inputs.insert(*p, domain[*d]);
            }
            if reproduces(&inputs) {
                return witness(&inputs);
            }
            // next assignment in odometer order
            let mut i = 0;
            loop {
                if i == digits.len() {
                    break;
                }
                digits[i] += 1;
                if digits[i] < domain.len() {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
            if i == digits.len() {
                break;
            }
        }
    }
    let seq = outputs.values().map(|(s, _)| *s).max();
    PropertyReport::fail(
        id,
        seq,
        format!("no replacement of one bad set over {} values reproduces the outputs", domain.len()),
    )
}
