use thiserror::Error;

use crate::adversary_structure::ProcessorId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("universe size {0} out of range (1..=64)")]
    UniverseSize(usize),

    #[error("threshold t={t} must be below n={n}")]
    Threshold { n: usize, t: usize },

    #[error("threshold collection C({n},{t}) is too large to materialize")]
    CollectionTooLarge { n: usize, t: usize },

    #[error("bad set {0} covers the whole universe")]
    BadSetIsUniverse(String),

    #[error("processor {0} outside universe of size {1}")]
    UnknownProcessor(ProcessorId, usize),

    #[error("set {0} is not a member of the bad-set collection")]
    NotBad(String),

    #[error("processor {0} is not the sender of this instance")]
    NotSender(ProcessorId),

    #[error("instance already invoked")]
    AlreadyInvoked,

    #[error("common core for round {round} needs at least {needed} ids, got {got}")]
    CoreTooSmall { round: u32, needed: usize, got: usize },

    #[error("common core for round {0} already started")]
    CoreRestarted(u32),

    #[error("engine already started")]
    AlreadyStarted,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("collection violates the three-set cover condition: {0}")]
    Predicate(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
