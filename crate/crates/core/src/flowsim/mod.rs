//! Scripted protocol runs over an in-memory bus.
//!
//! A [`Scenario`] is replayed twice: once against the real operator, data
//! services and reasoner ([`run_priaas`]), once as a message-shape model of
//! the UMA flow ([`run_uma`]). Every request or response that crosses a party
//! boundary is one [`Message`]. [`compare`] tallies both transcripts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::consent::canonical_bytes;
use crate::error::{Error, Result};

pub mod kinds;
mod priaas;
pub mod scenario;
mod uma;

pub use priaas::run_priaas;
pub(crate) use priaas::service_registration;
pub use scenario::{Baseline, Party, PartyKind, Scenario, Step};
pub use uma::run_uma;

pub const OPERATOR: &str = "operator";
pub const AUTHORIZATION_SERVER: &str = "authorization-server";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Registration,
    Consent,
    FirstAccess,
    SteadyState,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Registration,
        Phase::Consent,
        Phase::FirstAccess,
        Phase::SteadyState,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Priaas,
    Uma,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub kind: String,
    pub phase: Phase,
    /// Length of the canonical JSON body.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario: String,
    pub protocol: Protocol,
    pub messages: Vec<Message>,
    pub final_state: BTreeMap<String, Value>,
}

impl Transcript {
    pub fn count(&self, phase: Phase) -> usize {
        self.messages.iter().filter(|m| m.phase == phase).count()
    }

    pub fn counts(&self) -> BTreeMap<Phase, usize> {
        Phase::ALL.iter().map(|p| (*p, self.count(*p))).collect()
    }

    /// The figure the efficiency comparison is made on.
    pub fn consent_and_first_access(&self) -> usize {
        self.count(Phase::Consent) + self.count(Phase::FirstAccess)
    }

    /// Pretty JSON with a trailing newline; byte-stable for a given run.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("transcript serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowReport {
    pub scenario: String,
    pub priaas: BTreeMap<Phase, usize>,
    pub baseline: BTreeMap<Phase, usize>,
    pub priaas_total: usize,
    pub baseline_total: usize,
    /// `baseline_total - priaas_total`.
    pub delta: i64,
    pub verdict: Verdict,
}

/// PASS iff the PRIAAS consent plus first-access count is strictly below the
/// baseline's.
pub fn compare(priaas: &Transcript, baseline: &Transcript) -> Result<FlowReport> {
    if priaas.scenario != baseline.scenario {
        return Err(Error::InvalidArgument(format!(
            "transcripts are for different scenarios: {} and {}",
            priaas.scenario, baseline.scenario
        )));
    }
    let priaas_total = priaas.consent_and_first_access();
    let baseline_total = baseline.consent_and_first_access();
    Ok(FlowReport {
        scenario: priaas.scenario.clone(),
        priaas: priaas.counts(),
        baseline: baseline.counts(),
        priaas_total,
        baseline_total,
        delta: baseline_total as i64 - priaas_total as i64,
        verdict: if priaas_total < baseline_total {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    })
}

/// Runs the scenario and whatever baseline it names, then compares.
pub fn flow_report(scenario: &Scenario) -> Result<(Transcript, Transcript, FlowReport)> {
    let priaas = run_priaas(scenario)?;
    let baseline = match scenario.baseline {
        Baseline::Uma => run_uma(scenario)?,
        Baseline::Priaas => priaas.clone(),
    };
    let report = compare(&priaas, &baseline)?;
    Ok((priaas, baseline, report))
}

/// Append-only message log shared by one run.
#[derive(Debug)]
pub(crate) struct Bus {
    messages: Vec<Message>,
    pub phase: Phase,
}

impl Bus {
    pub fn new() -> Self {
        Self {
            messages: Vec::new(),
            phase: Phase::Registration,
        }
    }

    pub fn send<T: Serialize + ?Sized>(&mut self, from: &str, to: &str, kind: &str, body: &T) {
        let size = canonical_bytes(body).map(|b| b.len()).unwrap_or(0);
        self.messages.push(Message {
            seq: self.messages.len() as u64 + 1,
            from: from.into(),
            to: to.into(),
            kind: kind.into(),
            phase: self.phase,
            size,
        });
    }

    pub fn into_messages(self) -> Vec<Message> {
        self.messages
    }
}
