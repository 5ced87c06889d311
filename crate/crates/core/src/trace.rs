//! Trace records and their line-delimited JSON encoding.
//!
//! A trace file starts with one header line followed by one line per
//! event. Field names are stable; new kinds may be added.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::message::{CoKey, Message, RbKey, Value};
use crate::protocols::ProtocolConfig;

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    Send {
        env: u64,
        from: ProcessorId,
        to: ProcessorId,
        msg: Message,
    },
    /// The adversary replaced the payload of envelope `env`.
    Tamper {
        env: u64,
        from: ProcessorId,
        to: ProcessorId,
        msg: Message,
    },
    Drop {
        env: u64,
        from: ProcessorId,
        to: ProcessorId,
    },
    Deliver {
        env: u64,
        from: ProcessorId,
        to: ProcessorId,
    },
    InvokeRb {
        actor: ProcessorId,
        key: RbKey,
        value: Value,
    },
    /// Echo sent.
    M1 {
        actor: ProcessorId,
        key: RbKey,
        value: Value,
    },
    /// Ready sent.
    M2 {
        actor: ProcessorId,
        key: RbKey,
        value: Value,
    },
    AcceptRb {
        actor: ProcessorId,
        key: RbKey,
        value: Value,
    },
    InvokeRecrb {
        actor: ProcessorId,
        ctx: CoKey,
        value: Value,
    },
    RecrbPush {
        actor: ProcessorId,
        ctx: CoKey,
        iter: u32,
        value: Value,
    },
    AcceptRecrb {
        actor: ProcessorId,
        ctx: CoKey,
        value: Value,
    },
    AcceptCosend {
        actor: ProcessorId,
        ctx: CoKey,
        value: Value,
    },
    Cc1 {
        actor: ProcessorId,
        round: u32,
        set: ProcSet,
    },
    /// Step one finished after counting `counted`; `set` is sent.
    Cc2 {
        actor: ProcessorId,
        round: u32,
        set: ProcSet,
        counted: ProcSet,
    },
    CcDone {
        actor: ProcessorId,
        round: u32,
        snapshot: ProcSet,
        set: ProcSet,
    },
    SmInit {
        actor: ProcessorId,
        replica: ProcessorId,
        input: i64,
        digest: String,
    },
    SmStep {
        actor: ProcessorId,
        replica: ProcessorId,
        round: u32,
        pi: ProcSet,
        digest: String,
    },
    SmOutput {
        actor: ProcessorId,
        replica: ProcessorId,
        round: u32,
        output: serde_json::Value,
    },
    RoundAdvance {
        actor: ProcessorId,
        round: u32,
        set: ProcSet,
    },
    /// First registration of `actor`'s output in the global registry.
    Output {
        actor: ProcessorId,
        output: serde_json::Value,
    },
    Recover {
        actor: ProcessorId,
    },
    Resend {
        actor: ProcessorId,
        ctx: CoKey,
        iter: u32,
    },
    Warn {
        actor: Option<ProcessorId>,
        detail: String,
    },
    /// Last record. `complete` is true iff every pending message was
    /// delivered.
    End {
        complete: bool,
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub time: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub n: usize,
    pub maximal_sets: Vec<ProcSet>,
    pub controlled: ProcSet,
    pub silent: ProcSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolConfig>,
    /// Inputs handed to the processors (before any tampering).
    #[serde(default)]
    pub inputs: BTreeMap<ProcessorId, i64>,
}

impl TraceHeader {
    pub fn collection(&self) -> Result<BadSetCollection> {
        BadSetCollection::from_sets(self.n, self.maximal_sets.iter().copied())
    }

    /// Never controlled and not silent.
    pub fn correct(&self) -> ProcSet {
        ProcSet::universe(self.n).difference(self.controlled.union(self.silent))
    }

    /// Processors expected to take part until the end.
    pub fn live(&self) -> ProcSet {
        ProcSet::universe(self.n).difference(self.silent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// Whether the run reached quiescence (from the `END` record).
    pub fn complete(&self) -> bool {
        matches!(self.events.last(), Some(TraceEvent { event: Event::End { complete: true, .. }, .. }))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::MalformedTrace("missing header".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::MalformedTrace(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let h: TraceHeader = serde_json::from_str(&line)
                        .map_err(|e| Error::MalformedTrace(format!("line {}: {e}", i + 1)))?;
                    break h;
                }
            }
        };
        if header.version != TRACE_VERSION {
            return Err(Error::MalformedTrace(format!("unsupported version {}", header.version)));
        }
        let mut events: Vec<TraceEvent> = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::MalformedTrace(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent =
                serde_json::from_str(&line).map_err(|e| Error::MalformedTrace(format!("line {}: {e}", i + 1)))?;
            if events.last().is_some_and(|prev| prev.seq >= e.seq) {
                return Err(Error::MalformedTrace(format!("line {}: seq {} not increasing", i + 1, e.seq)));
            }
            events.push(e);
        }
        Ok(Trace { header, events })
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        Self::read_jsonl(s.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Push, RbPhase};

    fn header() -> TraceHeader {
        TraceHeader {
            version: TRACE_VERSION,
            name: "t".into(),
            seed: 3,
            n: 4,
            maximal_sets: BadSetCollection::threshold(4, 1).unwrap().maximal_sets().to_vec(),
            controlled: ProcSet::from([3]),
            silent: ProcSet::EMPTY,
            mode: Some(Mode::Bisynch),
            protocol: Some(ProtocolConfig::EpsilonAgreement { lo: 0, hi: 16 }),
            inputs: [(ProcessorId(0), 1)].into(),
        }
    }

    #[test]
    fn roundtrip() {
        let key = RbKey { ctx: CoKey { round: 1, sender: ProcessorId(2) }, iter: 1, origin: ProcessorId(0) };
        let events = vec![
            TraceEvent {
                seq: 0,
                time: 0,
                event: Event::Send {
                    env: 0,
                    from: ProcessorId(0),
                    to: ProcessorId(1),
                    msg: Message::Rb { key, phase: RbPhase::Echo, value: Value::Ids(ProcSet::from([0, 2])) },
                },
            },
            TraceEvent {
                seq: 1,
                time: 4,
                event: Event::Send {
                    env: 1,
                    from: ProcessorId(2),
                    to: ProcessorId(1),
                    msg: Message::Push {
                        ctx: key.ctx,
                        push: Push {
                            iter: 2,
                            value: Value::Input(4),
                            history: [(ProcessorId(1), Value::Input(4))].into(),
                        },
                    },
                },
            },
            TraceEvent { seq: 2, time: 4, event: Event::Warn { actor: None, detail: "x".into() } },
            TraceEvent {
                seq: 3,
                time: 5,
                event: Event::SmOutput {
                    actor: ProcessorId(1),
                    replica: ProcessorId(1),
                    round: 5,
                    output: serde_json::json!([1, 2]),
                },
            },
            TraceEvent { seq: 4, time: 5, event: Event::End { complete: true, reason: "drained".into() } },
        ];
        let t = Trace { header: header(), events };
        let text = t.to_jsonl();
        assert!(text.lines().nth(1).unwrap().contains(r#""kind":"SEND""#));
        let back = Trace::from_jsonl(&text).unwrap();
        assert_eq!(back, t);
        assert!(back.complete());
    }

    #[test]
    fn rejects_non_increasing_seq() {
        let ev = TraceEvent { seq: 1, time: 0, event: Event::Recover { actor: ProcessorId(0) } };
        let t = Trace { header: header(), events: vec![ev.clone(), ev] };
        assert!(matches!(Trace::from_jsonl(&t.to_jsonl()), Err(Error::MalformedTrace(_))));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Trace::from_jsonl("").is_err());
        assert!(Trace::from_jsonl("{\"version\":1}\n").is_err());
    }

    #[test]
    fn correct_and_live_sets() {
        let mut h = header();
        h.silent = ProcSet::from([2]);
        assert_eq!(h.correct(), ProcSet::from([0, 1]));
        assert_eq!(h.live(), ProcSet::from([0, 1, 3]));
    }
}
