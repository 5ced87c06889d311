//! TOML scenario files: parsing, validation and the standard run procedure.
//!
//! ```toml
//! name = "equivocate_4_1"
//! seed = 7
//! mode = "BISYNCH"
//! expect = "pass"
//!
//! [faults]
//! threshold = { n = 4, t = 1 }
//!
//! [adversary]
//! controlled = [3]
//! recovery_order = [3]
//! tamper = { script = "equivocate-input", targets = [0, 1], alt = 12 }
//!
//! [protocol]
//! name = "epsilon-agreement"
//! lo = 0
//! hi = 16
//! inputs = [2, 4, 6, 8]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary_structure::{BadSetCollection, ProcSet, ProcessorId};
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::harness::{check_trace, Report};
use crate::message::Value;
use crate::net::{AdversaryPolicy, TamperScript};
use crate::protocols::{AnyProtocol, ProtocolConfig};
use crate::simulation::{RunStatus, Simulation};
use crate::trace::{Trace, TraceHeader, TRACE_VERSION};

pub const DEFAULT_MAX_EVENTS: u64 = 2_000_000;
pub const DEFAULT_QUIET_EXTENSION: u64 = 2_000_000;

/// Run outcome classes, each with its own process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expect {
    /// Complete run, no FAIL verdict.
    Pass,
    /// At least one FAIL verdict.
    Fail,
    /// Usage, parse or validation error.
    Invalid,
    /// The collection admits three bad sets covering everyone.
    PredicateViolation,
    /// Messages still pending after the quiet extension.
    Incomplete,
    /// The replacement search exceeded its cap.
    Inconclusive,
}

impl Expect {
    pub fn exit_code(self) -> i32 {
        match self {
            Expect::Pass => 0,
            Expect::Fail => 2,
            Expect::Invalid => 3,
            Expect::PredicateViolation => 4,
            Expect::Incomplete => 5,
            Expect::Inconclusive => 6,
        }
    }

    /// Classifies a checked trace.
    pub fn of_report(report: &Report) -> Self {
        if report.has_failure() {
            Expect::Fail
        } else if !report.complete {
            Expect::Incomplete
        } else if report.is_inconclusive() {
            Expect::Inconclusive
        } else {
            Expect::Pass
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Predicate(_) => Expect::PredicateViolation,
            _ => Expect::Invalid,
        }
    }
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expect::Pass => "pass",
            Expect::Fail => "fail",
            Expect::Invalid => "invalid",
            Expect::PredicateViolation => "predicate-violation",
            Expect::Incomplete => "incomplete",
            Expect::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub n: usize,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Faults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximal_sets: Option<Vec<ProcSet>>,
}

impl Faults {
    pub fn collection(&self) -> Result<BadSetCollection> {
        match (&self.threshold, self.n, &self.maximal_sets) {
            (Some(th), None, None) => BadSetCollection::threshold(th.n, th.t),
            (None, Some(n), Some(sets)) => BadSetCollection::from_sets(n, sets.iter().copied()),
            _ => Err(Error::Config("[faults] needs either `threshold` or both `n` and `maximal_sets`".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adversary {
    #[serde(default)]
    pub controlled: ProcSet,
    #[serde(default)]
    pub silent: ProcSet,
    #[serde(default)]
    pub recovery_order: Vec<ProcessorId>,
    #[serde(default)]
    pub tamper: TamperScript,
    #[serde(default = "default_max_delay")]
    pub max_delay: u64,
    #[serde(default)]
    pub slow: ProcSet,
    #[serde(default)]
    pub slow_delay: u64,
}

fn default_max_delay() -> u64 {
    AdversaryPolicy::default().max_delay
}

impl Default for Adversary {
    fn default() -> Self {
        Adversary {
            controlled: ProcSet::EMPTY,
            silent: ProcSet::EMPTY,
            recovery_order: Vec::new(),
            tamper: TamperScript::None,
            max_delay: default_max_delay(),
            slow: ProcSet::EMPTY,
            slow_delay: 0,
        }
    }
}

impl Adversary {
    pub fn policy(&self) -> AdversaryPolicy {
        AdversaryPolicy {
            controlled: self.controlled,
            silent: self.silent,
            recovery_order: self.recovery_order.clone(),
            script: self.tamper.clone(),
            max_delay: self.max_delay,
            slow: self.slow,
            slow_delay: self.slow_delay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSection {
    #[serde(flatten)]
    pub config: ProtocolConfig,
    /// One input per processor, by id.
    pub inputs: Vec<i64>,
}

/// A standalone reliable broadcast issued at start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbInvoke {
    pub sender: ProcessorId,
    pub value: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default = "default_quiet_extension")]
    pub quiet_extension: u64,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

fn default_quiet_extension() -> u64 {
    DEFAULT_QUIET_EXTENSION
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_events: DEFAULT_MAX_EVENTS, quiet_extension: DEFAULT_QUIET_EXTENSION }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_expect")]
    pub expect: Expect,
    pub faults: Faults,
    #[serde(default)]
    pub adversary: Adversary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rb: Vec<RbInvoke>,
    #[serde(default)]
    pub budget: Budget,
}

fn default_mode() -> Mode {
    Mode::Bisynch
}

fn default_expect() -> Expect {
    Expect::Pass
}

/// Result of one scenario run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub trace: Trace,
    pub report: Report,
    pub status: RunStatus,
}

impl Outcome {
    pub fn verdict(&self) -> Expect {
        Expect::of_report(&self.report)
    }

    pub fn exit_code(&self) -> i32 {
        self.verdict().exit_code()
    }
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<BadSetCollection> {
        let c = self.faults.collection()?;
        let n = c.universe_size();
        if !c.satisfies_byzantine_predicate() {
            return Err(Error::Predicate(format!("{} maximal sets over {n} processors", c.maximal_sets().len())));
        }
        self.adversary.policy().validate(&c)?;
        if let Some(p) = &self.protocol {
            if p.inputs.len() != n {
                return Err(Error::Config(format!("{} inputs for {n} processors", p.inputs.len())));
            }
            AnyProtocol::from_config(&p.config, n)?;
        } else if self.mode == Mode::Bimo {
            return Err(Error::Config("mode BIMO needs a [protocol] section".into()));
        }
        if self.mode == Mode::Bimo && c.threshold_t().is_none() {
            return Err(Error::Config("mode BIMO needs a threshold collection".into()));
        }
        for inv in &self.rb {
            c.check_member(inv.sender)?;
        }
        if self.protocol.is_none() && self.rb.is_empty() {
            return Err(Error::Config("nothing to run: no [protocol] and no [[rb]]".into()));
        }
        Ok(c)
    }

    pub fn header(&self, c: &BadSetCollection) -> TraceHeader {
        let inputs: BTreeMap<ProcessorId, i64> = self
            .protocol
            .iter()
            .flat_map(|p| p.inputs.iter().enumerate().map(|(i, x)| (ProcessorId::from(i), *x)))
            .collect();
        TraceHeader {
            version: TRACE_VERSION,
            name: self.name.clone(),
            seed: self.seed,
            n: c.universe_size(),
            maximal_sets: c.maximal_sets().to_vec(),
            controlled: self.adversary.controlled,
            silent: self.adversary.silent,
            mode: self.protocol.as_ref().map(|_| self.mode),
            protocol: self.protocol.as_ref().map(|p| p.config.clone()),
            inputs,
        }
    }

    /// Runs until drained or `max_events` deliveries, then lets the
    /// adversary go quiet for up to `quiet_extension` more, and checks the
    /// resulting trace.
    pub fn run(&self) -> Result<Outcome> {
        let c = self.validate()?;
        let n = c.universe_size();
        let proto = match &self.protocol {
            Some(p) => AnyProtocol::from_config(&p.config, n)?,
            None => AnyProtocol::from_config(&ProtocolConfig::Flood, n)?,
        };
        let mut sim = Simulation::new(proto, c.clone(), self.adversary.policy(), self.mode, self.seed)?;
        if let Some(p) = &self.protocol {
            for (i, x) in p.inputs.iter().enumerate() {
                sim.start_engine(ProcessorId::from(i), *x)?;
            }
        }
        for inv in &self.rb {
            sim.invoke_rb(inv.sender, Value::Input(inv.value))?;
        }
        let mut status = sim.run(self.budget.max_events);
        if status != RunStatus::Drained {
            sim.set_idle();
            status = sim.run(self.budget.quiet_extension);
        }
        let reason = match status {
            RunStatus::Drained => "drained",
            _ => "budget exhausted",
        };
        let trace = sim.finish(self.header(&c), reason);
        let report = check_trace(&trace)?;
        Ok(Outcome { trace, report, status })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Scenario { seed, ..self.clone() }
    }
}
