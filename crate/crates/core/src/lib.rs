//! Simulator for recoverable broadcast and round-based protocols under a
//! general adversary structure.

pub mod adversary_structure;
pub mod broadcast;
pub mod common_core;
pub mod engine;
pub mod error;
pub mod harness;
pub mod message;
pub mod net;
pub mod node;
pub mod protocols;
pub mod scenario;
pub mod simulation;
pub mod trace;

pub use adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
pub use engine::{Mode, SyncProtocol};
pub use error::{Error, Result};
pub use harness::{check_trace, PropertyReport, Report, Verdict};
pub use message::{CoKey, Message, Push, RbKey, RbPhase, Value};
pub use net::{AdversaryPolicy, TamperScript};
pub use protocols::{AnyProtocol, EpsilonAgreement, Flood, ProtocolConfig};
pub use scenario::{Expect, Outcome, Scenario};
pub use simulation::{RunStatus, Simulation};
pub use trace::{Event, Trace, TraceEvent, TraceHeader};
