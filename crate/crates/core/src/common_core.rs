//! Two-step common-core exchange run before each round broadcast.
//!
//! Each processor sends its current `accept[r]`, waits until `n-t` of the
//! received sets are contained in its (still growing) `accept[r]`, sends the
//! set again and waits for `n-t` contained second-step sets. The returned
//! sets of all processors then share at least `n-t` ids.

use std::collections::BTreeMap;

use crate::adversary_structure::{ProcSet, ProcessorId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CorePhase {
    Idle,
    One,
    Two,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoreAction {
    /// Send `(round, step, set)` to all.
    Broadcast {
        step: u8,
        set: ProcSet,
    },
    /// First step completed; `counted` are the senders whose step-one sets
    /// were contained in `accept[r]`.
    StepOneDone {
        counted: ProcSet,
    },
    Done(ProcSet),
}

#[derive(Clone, Debug)]
pub struct CommonCoreInstance {
    round: u32,
    quorum: usize,
    phase: CorePhase,
    snapshot: ProcSet,
    received: [BTreeMap<ProcessorId, ProcSet>; 2],
    counted_one: ProcSet,
    result: Option<ProcSet>,
}

impl CommonCoreInstance {
    /// `quorum` is `n - t`.
    pub fn new(round: u32, quorum: usize) -> Self {
        CommonCoreInstance {
            round,
            quorum,
            phase: CorePhase::Idle,
            snapshot: ProcSet::EMPTY,
            received: [BTreeMap::new(), BTreeMap::new()],
            counted_one: ProcSet::EMPTY,
            result: None,
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn phase(&self) -> CorePhase {
        self.phase
    }

    pub fn snapshot(&self) -> ProcSet {
        self.snapshot
    }

    pub fn result(&self) -> Option<ProcSet> {
        self.result
    }

    pub fn counted_one(&self) -> ProcSet {
        self.counted_one
    }

    pub fn start(&mut self, view: ProcSet) -> Result<Vec<CoreAction>> {
        if self.phase != CorePhase::Idle {
            return Err(Error::CoreRestarted(self.round));
        }
        if view.len() < self.quorum {
            return Err(Error::CoreTooSmall { round: self.round, needed: self.quorum, got: view.len() });
        }
        self.snapshot = view;
        self.phase = CorePhase::One;
        let mut out = vec![CoreAction::Broadcast { step: 1, set: view }];
        out.extend(self.poll(view));
        Ok(out)
    }

    /// Stores a step message. Messages may arrive before `start`; the first
    /// message per sender and step is kept.
    pub fn record(&mut self, from: ProcessorId, step: u8, set: ProcSet) {
        if let Some(slot) = step.checked_sub(1).and_then(|i| self.received.get_mut(i as usize)) {
            slot.entry(from).or_insert(set);
        }
    }

    fn contained(&self, step: usize, accept: ProcSet) -> ProcSet {
        self.received[step].iter().filter(|(_, s)| s.is_subset(accept)).map(|(j, _)| *j).collect()
    }

    /// Re-evaluates the wait conditions against the live `accept[r]`.
    pub fn poll(&mut self, accept: ProcSet) -> Vec<CoreAction> {
        let mut out = Vec::new();
        if self.phase == CorePhase::One {
            let counted = self.contained(0, accept);
            if counted.len() >= self.quorum {
                self.counted_one = counted;
                self.phase = CorePhase::Two;
                out.push(CoreAction::StepOneDone { counted });
                out.push(CoreAction::Broadcast { step: 2, set: accept });
            }
        }
        if self.phase == CorePhase::Two && self.contained(1, accept).len() >= self.quorum {
            self.phase = CorePhase::Done;
            self.result = Some(accept);
            out.push(CoreAction::Done(accept));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u8) -> ProcessorId {
        ProcessorId(i)
    }

    #[test]
    fn start_broadcasts_snapshot() {
        let mut cc = CommonCoreInstance::new(1, 3);
        let view = ProcSet::from([0, 1, 2]);
        assert_eq!(cc.start(view).unwrap(), vec![CoreAction::Broadcast { step: 1, set: view }]);
        assert_eq!(cc.phase(), CorePhase::One);
        assert_eq!(cc.start(view), Err(Error::CoreRestarted(1)));
    }

    #[test]
    fn start_rejects_small_view() {
        let mut cc = CommonCoreInstance::new(1, 3);
        assert_eq!(cc.start(ProcSet::from([0, 1])), Err(Error::CoreTooSmall { round: 1, needed: 3, got: 2 }));
    }

    #[test]
    fn two_steps_complete() {
        let mut cc = CommonCoreInstance::new(1, 3);
        let accept = ProcSet::from([0, 1, 2]);
        cc.start(accept).unwrap();
        cc.record(p(0), 1, accept);
        cc.record(p(1), 1, accept);
        assert!(cc.poll(accept).is_empty());
        cc.record(p(2), 1, ProcSet::from([1, 2]));
        let out = cc.poll(accept);
        assert_eq!(
            out,
            vec![
                CoreAction::StepOneDone { counted: ProcSet::from([0, 1, 2]) },
                CoreAction::Broadcast { step: 2, set: accept }
            ]
        );
        for q in 0..3 {
            cc.record(p(q), 2, accept);
        }
        assert_eq!(cc.poll(accept), vec![CoreAction::Done(accept)]);
        assert_eq!(cc.result(), Some(accept));
    }

    #[test]
    fn late_growth_of_accept_counts_set() {
        let mut cc = CommonCoreInstance::new(2, 3);
        let mut accept = ProcSet::from([0, 1, 2]);
        cc.start(accept).unwrap();
        cc.record(p(0), 1, accept);
        cc.record(p(1), 1, accept);
        cc.record(p(3), 1, ProcSet::from([1, 2, 3]));
        assert!(cc.poll(accept).is_empty());
        accept.insert(p(3));
        let out = cc.poll(accept);
        assert!(matches!(out[0], CoreAction::StepOneDone { counted } if counted == ProcSet::from([0, 1, 3])));
    }

    #[test]
    fn buffered_messages_before_start() {
        let mut cc = CommonCoreInstance::new(1, 3);
        let accept = ProcSet::from([0, 1, 2, 3]);
        for q in 0..4 {
            cc.record(p(q), 1, ProcSet::from([0, 1, 2]));
            cc.record(p(q), 2, accept);
        }
        let out = cc.start(accept).unwrap();
        assert_eq!(out.last(), Some(&CoreAction::Done(accept)));
        // the result may be larger than the snapshot only through growth
        assert!(cc.snapshot().is_subset(cc.result().unwrap()));
    }
}
