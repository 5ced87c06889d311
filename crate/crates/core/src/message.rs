//! Wire payloads exchanged through the simulated network.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary_structure::{ProcSet, ProcessorId};

/// Value carried by a co_send broadcast: an input in round 1, an id-set in
/// every later round.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Input(i64),
    Ids(ProcSet),
}

impl Value {
    pub fn as_ids(&self) -> Option<ProcSet> {
        match self {
            Value::Ids(s) => Some(*s),
            Value::Input(_) => None,
        }
    }

    pub fn as_input(&self) -> Option<i64> {
        match self {
            Value::Input(x) => Some(*x),
            Value::Ids(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Input(x) => write!(f, "{x}"),
            Value::Ids(s) => write!(f, "{s}"),
        }
    }
}

/// Identifies one co_send (and the RecRB it drives): round `round`,
/// broadcast by `sender`. Round 0 is reserved for standalone broadcasts
/// that have no enclosing co_send.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoKey {
    pub round: u32,
    pub sender: ProcessorId,
}

/// Identifies one reliable-broadcast instance: iteration `iter` of the
/// RecRB `ctx`, broadcast by `origin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RbKey {
    pub ctx: CoKey,
    pub iter: u32,
    pub origin: ProcessorId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbPhase {
    /// The origin's value.
    Initial,
    /// `m1`.
    Echo,
    /// `m2`.
    Ready,
}

/// Accepted reliable broadcasts of one RecRB iteration, by reporter.
pub type History = BTreeMap<ProcessorId, Value>;

/// A RecRB sender message `⟨v, k, H[k-1]⟩`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Push {
    pub iter: u32,
    pub value: Value,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Rb { key: RbKey, phase: RbPhase, value: Value },
    Push { ctx: CoKey, push: Push },
    Core { round: u32, phase: u8, set: ProcSet },
}
