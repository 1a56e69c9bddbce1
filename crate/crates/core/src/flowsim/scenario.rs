//! Scenario scripts.
//!
//! ```json
//! {
//!   "name": "fig5",
//!   "seed": 42,
//!   "start": "2024-03-11T09:00:00Z",
//!   "parties": [{"id": "alice", "kind": "user"}, {"id": "w2e", "kind": "source"}],
//!   "steps": [{"op": "register", "party": "w2e"}, {"op": "advance_clock", "seconds": 31}]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::consent::{ConsentAction, TimeRange};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyKind {
    User,
    Source,
    Reasoner,
    App,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Party {
    pub id: String,
    pub kind: PartyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Key under which a user appears in vendor data. Defaults to the id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor_user: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Register {
        party: String,
    },
    CreateAccount {
        user: String,
    },
    Link {
        user: String,
        service: String,
    },
    /// Loads the bundled vendor data for `user` into `source`.
    Sync {
        source: String,
        user: String,
    },
    Grant {
        label: String,
        user: String,
        source: String,
        sink: String,
        resource_types: Vec<String>,
        purposes: Vec<String>,
    },
    SetStatus {
        grant: String,
        action: ConsentAction,
    },
    AdvanceClock {
        seconds: i64,
    },
    /// The grant's sink reads from its source, one request per resource type.
    Fetch {
        grant: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        resource_types: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<TimeRange>,
    },
}

/// What the PRIAAS run is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Uma,
    /// The PRIAAS run itself; always a FAIL.
    Priaas,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub start: DateTime<Utc>,
    #[serde(default)]
    pub baseline: Baseline,
    pub parties: Vec<Party>,
    pub steps: Vec<Step>,
}

/// Where a grant's data comes from and goes to, resolved at validation.
#[derive(Debug, Clone)]
pub(crate) struct GrantShape {
    pub user: String,
    pub source: String,
    pub sink: String,
    pub resource_types: Vec<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| Error::ScenarioInvalid(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ScenarioInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The bundled three-service health scenario.
    pub fn fig5() -> Self {
        Self::from_json(include_str!("../../fixtures/scenarios/fig5.json"))
            .expect("bundled scenario is valid")
    }

    pub fn party(&self, id: &str) -> Option<&Party> {
        self.parties.iter().find(|p| p.id == id)
    }

    /// Checks every reference in the script, in step order.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ScenarioInvalid(m));
        if self.name.trim().is_empty() {
            return bad("scenario name is empty".into());
        }
        let mut ids = BTreeSet::new();
        for p in &self.parties {
            if p.id.trim().is_empty() || !ids.insert(p.id.as_str()) {
                return bad(format!("party id {:?} is empty or repeated", p.id));
            }
            if p.id == super::OPERATOR || p.id == super::AUTHORIZATION_SERVER {
                return bad(format!("party id {:?} is reserved", p.id));
            }
        }
        let kind_of = |id: &str| self.party(id).map(|p| p.kind);
        let expect = |id: &str, ok: &[PartyKind], step: usize| -> Result<()> {
            match kind_of(id) {
                Some(k) if ok.contains(&k) => Ok(()),
                Some(k) => bad(format!("step {step}: {id} is a {k:?} party")),
                None => bad(format!("step {step}: unknown party {id}")),
            }
        };
        use PartyKind::*;
        let services = [Source, Reasoner, App];
        let mut registered = BTreeSet::new();
        let mut accounts = BTreeSet::new();
        let mut links = BTreeSet::new();
        let mut grants: BTreeMap<&str, GrantShape> = BTreeMap::new();
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            match step {
                Step::Register { party } => {
                    expect(party, &services, n)?;
                    if !registered.insert(party.as_str()) {
                        return bad(format!("step {n}: {party} registered twice"));
                    }
                }
                Step::CreateAccount { user } => {
                    expect(user, &[User], n)?;
                    if !accounts.insert(user.as_str()) {
                        return bad(format!("step {n}: account for {user} created twice"));
                    }
                }
                Step::Link { user, service } => {
                    expect(user, &[User], n)?;
                    expect(service, &services, n)?;
                    if !accounts.contains(user.as_str()) || !registered.contains(service.as_str()) {
                        return bad(format!("step {n}: link before account or registration"));
                    }
                    links.insert((user.as_str(), service.as_str()));
                }
                Step::Sync { source, user } => {
                    expect(source, &[Source], n)?;
                    if !links.contains(&(user.as_str(), source.as_str())) {
                        return bad(format!("step {n}: {user} is not linked to {source}"));
                    }
                }
                Step::Grant {
                    label,
                    user,
                    source,
                    sink,
                    resource_types,
                    purposes,
                } => {
                    expect(source, &[Source, Reasoner], n)?;
                    expect(sink, &[Reasoner, App], n)?;
                    for s in [source, sink] {
                        if !links.contains(&(user.as_str(), s.as_str())) {
                            return bad(format!("step {n}: {user} is not linked to {s}"));
                        }
                    }
                    if resource_types.is_empty() || purposes.is_empty() {
                        return bad(format!("step {n}: grant needs resource types and purposes"));
                    }
                    if kind_of(sink) == Some(App) && kind_of(source) == Some(Reasoner) {
                        // the reasoner serves its two inference resources only
                        if let Some(r) = resource_types.iter().find(|r| {
                            !matches!(
                                r.as_str(),
                                crate::fixtures::RECOMMENDATIONS | crate::fixtures::FACTS
                            )
                        }) {
                            return bad(format!("step {n}: the reasoner does not serve {r}"));
                        }
                    }
                    let shape = GrantShape {
                        user: user.clone(),
                        source: source.clone(),
                        sink: sink.clone(),
                        resource_types: resource_types.clone(),
                    };
                    if grants.insert(label.as_str(), shape).is_some() {
                        return bad(format!("step {n}: grant label {label} reused"));
                    }
                }
                Step::SetStatus { grant, .. } => {
                    if !grants.contains_key(grant.as_str()) {
                        return bad(format!("step {n}: unknown grant {grant}"));
                    }
                }
                Step::AdvanceClock { seconds } => {
                    if *seconds < 0 {
                        return bad(format!("step {n}: the clock only moves forward"));
                    }
                }
                Step::Fetch { grant, window, .. } => {
                    let Some(shape) = grants.get(grant.as_str()) else {
                        return bad(format!("step {n}: unknown grant {grant}"));
                    };
                    if kind_of(&shape.source) == Some(Reasoner)
                        && kind_of(&shape.sink) == Some(Reasoner)
                    {
                        return bad(format!("step {n}: a reasoner cannot read from itself"));
                    }
                    if let Some(w) = window {
                        w.validate()
                            .map_err(|e| Error::ScenarioInvalid(format!("step {n}: {e}")))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Grant shapes by label, as declared by the script.
    pub(crate) fn grants(&self) -> BTreeMap<String, GrantShape> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Grant {
                    label,
                    user,
                    source,
                    sink,
                    resource_types,
                    ..
                } => Some((
                    label.clone(),
                    GrantShape {
                        user: user.clone(),
                        source: source.clone(),
                        sink: sink.clone(),
                        resource_types: resource_types.clone(),
                    },
                )),
                _ => None,
            })
            .collect()
    }
}
