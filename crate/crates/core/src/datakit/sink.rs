//! Sink side: held tokens and observations fetched under each consent.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::guard::{Inbox, OperatorKeys};
use super::observation::Observation;
use super::source::DataPage;
use crate::consent::{ConsentSnapshot, ConsentStatus, TimeRange};
use crate::error::{Error, Result};
use crate::ids::{ConsentId, OperatorId, Pseudonym, ServiceId};
use crate::operator::{EventKind, EventPayload, NotificationEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldToken {
    pub consent_id: ConsentId,
    pub operator_id: OperatorId,
    pub source_id: ServiceId,
    pub source_endpoint: String,
    pub token: String,
    /// This sink's own pseudonym for the account.
    pub own_pseudonym: Pseudonym,
    pub resource_types: Vec<String>,
    pub time_range: Option<TimeRange>,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurgeReport {
    pub deleted: usize,
}

/// What an inbound notice did on the sink side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkNotice {
    TokenStored(ConsentId),
    StatusUpdated(ConsentId, ConsentStatus),
    Purged {
        consent_ids: Vec<ConsentId>,
        deleted: usize,
        pseudonym: Option<Pseudonym>,
    },
    Migrated {
        old: Pseudonym,
        new: Pseudonym,
        consent_map: BTreeMap<ConsentId, ConsentId>,
    },
    Ignored,
}

#[derive(Debug, Default)]
struct SinkTables {
    tokens: BTreeMap<ConsentId, HeldToken>,
    status: BTreeMap<ConsentId, (ConsentStatus, u64)>,
    data: BTreeMap<ConsentId, BTreeMap<String, Observation>>,
}

#[derive(Debug)]
pub struct DataSink {
    service_id: ServiceId,
    aliases: RwLock<Vec<ServiceId>>,
    pub keys: Arc<OperatorKeys>,
    inbox: Inbox,
    tables: RwLock<SinkTables>,
}

impl DataSink {
    pub fn new(service_id: ServiceId, keys: Arc<OperatorKeys>) -> Self {
        Self {
            service_id,
            aliases: RwLock::new(Vec::new()),
            keys,
            inbox: Inbox::new(),
            tables: RwLock::new(SinkTables::default()),
        }
    }

    pub fn service_id(&self) -> &ServiceId {
        &self.service_id
    }

    /// Accepts notices addressed to `id`, this service's id at another operator.
    pub fn add_identity(&self, id: ServiceId) {
        let mut aliases = self.aliases.write().unwrap();
        if id != self.service_id && !aliases.contains(&id) {
            aliases.push(id);
        }
    }

    fn is_me(&self, id: &ServiceId) -> bool {
        id == &self.service_id || self.aliases.read().unwrap().contains(id)
    }

    pub fn token(&self, consent_id: &ConsentId) -> Option<HeldToken> {
        self.tables.read().unwrap().tokens.get(consent_id).cloned()
    }

    pub fn tokens(&self) -> Vec<HeldToken> {
        self.tables
            .read()
            .unwrap()
            .tokens
            .values()
            .cloned()
            .collect()
    }

    /// A held token from `source_id` whose scope includes `resource_type`.
    pub fn token_for(&self, source_id: &ServiceId, resource_type: &str) -> Option<HeldToken> {
        self.tables
            .read()
            .unwrap()
            .tokens
            .values()
            .filter(|t| {
                &t.source_id == source_id && t.resource_types.iter().any(|r| r == resource_type)
            })
            .max_by_key(|t| t.version)
            .cloned()
    }

    pub fn status(&self, consent_id: &ConsentId) -> Option<ConsentStatus> {
        self.tables
            .read()
            .unwrap()
            .status
            .get(consent_id)
            .map(|s| s.0)
    }

    /// Verifies, de-duplicates and applies one operator notice.
    pub fn apply_notice(&self, event: &NotificationEvent) -> Result<SinkNotice> {
        if !self.inbox.accept(&self.keys, event)? {
            return Ok(SinkNotice::Ignored);
        }
        Ok(self.apply_verified(event))
    }

    /// Applies a notice whose authenticity the caller already checked.
    pub fn apply_verified(&self, event: &NotificationEvent) -> SinkNotice {
        match &event.payload {
            EventPayload::Token {
                snapshot,
                token,
                service_pseudonym,
                source_endpoint,
            } => {
                if !self.is_me(&snapshot.sink_id) || !self.advance(snapshot) {
                    return SinkNotice::Ignored;
                }
                let held = HeldToken {
                    consent_id: snapshot.consent_id.clone(),
                    operator_id: event.operator_id.clone(),
                    source_id: snapshot.source_id.clone(),
                    source_endpoint: source_endpoint.clone(),
                    token: token.clone(),
                    own_pseudonym: service_pseudonym.clone(),
                    resource_types: snapshot
                        .resource_set
                        .resource_types
                        .iter()
                        .cloned()
                        .collect(),
                    time_range: snapshot.resource_set.time_range,
                    version: snapshot.version,
                };
                self.tables
                    .write()
                    .unwrap()
                    .tokens
                    .insert(held.consent_id.clone(), held);
                SinkNotice::TokenStored(snapshot.consent_id.clone())
            }
            EventPayload::Consent { snapshot, .. } => {
                if !self.is_me(&snapshot.sink_id) || !self.advance(snapshot) {
                    return SinkNotice::Ignored;
                }
                if snapshot.status == ConsentStatus::Revoked {
                    let deleted = self.purge(&snapshot.consent_id).deleted;
                    return SinkNotice::Purged {
                        consent_ids: vec![snapshot.consent_id.clone()],
                        deleted,
                        pseudonym: None,
                    };
                }
                // A paused consent keeps its data but the token is no longer usable.
                self.tables
                    .write()
                    .unwrap()
                    .tokens
                    .remove(&snapshot.consent_id);
                SinkNotice::StatusUpdated(snapshot.consent_id.clone(), snapshot.status)
            }
            EventPayload::AccountErased {
                service_pseudonym,
                consent_ids,
            } => {
                let deleted = consent_ids.iter().map(|c| self.purge(c).deleted).sum();
                SinkNotice::Purged {
                    consent_ids: consent_ids.clone(),
                    deleted,
                    pseudonym: Some(service_pseudonym.clone()),
                }
            }
            EventPayload::OperatorMigrated {
                old_pseudonym,
                new_pseudonym,
                consent_map,
                ..
            } => {
                let mut t = self.tables.write().unwrap();
                for (old, new) in consent_map {
                    t.tokens.remove(old);
                    t.status.remove(old);
                    if let Some(rows) = t.data.remove(old) {
                        let rows = rows
                            .into_iter()
                            .map(|(id, mut o)| {
                                if &o.pseudonym == old_pseudonym {
                                    o.pseudonym = new_pseudonym.clone();
                                }
                                (id, o)
                            })
                            .collect();
                        t.data.insert(new.clone(), rows);
                    }
                }
                SinkNotice::Migrated {
                    old: old_pseudonym.clone(),
                    new: new_pseudonym.clone(),
                    consent_map: consent_map.clone(),
                }
            }
        }
    }

    /// Records a newer version; false when the snapshot is stale.
    fn advance(&self, snapshot: &ConsentSnapshot) -> bool {
        let mut t = self.tables.write().unwrap();
        match t.status.get(&snapshot.consent_id) {
            Some((ConsentStatus::Revoked, _)) => false,
            Some((_, v)) if *v > snapshot.version => false,
            _ => {
                t.status.insert(
                    snapshot.consent_id.clone(),
                    (snapshot.status, snapshot.version),
                );
                true
            }
        }
    }

    /// Drops the token and every raw observation stored under `consent_id`.
    /// Idempotent: a second call deletes nothing.
    pub fn purge(&self, consent_id: &ConsentId) -> PurgeReport {
        let mut t = self.tables.write().unwrap();
        t.tokens.remove(consent_id);
        let version = t.status.get(consent_id).map(|s| s.1).unwrap_or(0);
        t.status
            .insert(consent_id.clone(), (ConsentStatus::Revoked, version));
        PurgeReport {
            deleted: t
                .data
                .remove(consent_id)
                .map(|rows| rows.len())
                .unwrap_or(0),
        }
    }

    /// Purge entry point for a revocation or erasure event.
    pub fn apply_revocation(&self, event: &NotificationEvent) -> PurgeReport {
        match &event.payload {
            EventPayload::AccountErased { consent_ids, .. } => PurgeReport {
                deleted: consent_ids.iter().map(|c| self.purge(c).deleted).sum(),
            },
            EventPayload::Consent { snapshot, .. } | EventPayload::Token { snapshot, .. }
                if event.kind == EventKind::ConsentStatusChanged
                    && snapshot.status == ConsentStatus::Revoked =>
            {
                self.purge(&snapshot.consent_id)
            }
            _ => PurgeReport { deleted: 0 },
        }
    }

    /// Stores fetched observations under the consent they were fetched with.
    pub fn store(&self, consent_id: &ConsentId, observations: Vec<Observation>) -> Result<usize> {
        let mut t = self.tables.write().unwrap();
        if matches!(t.status.get(consent_id), Some((ConsentStatus::Revoked, _))) {
            return Err(Error::ConsentInactive);
        }
        let rows = t.data.entry(consent_id.clone()).or_default();
        let before = rows.len();
        for o in observations {
            rows.insert(o.id.clone(), o);
        }
        Ok(rows.len() - before)
    }

    pub fn query(&self, consent_id: &ConsentId) -> Vec<Observation> {
        let t = self.tables.read().unwrap();
        let mut out: Vec<Observation> = t
            .data
            .get(consent_id)
            .map(|rows| rows.values().cloned().collect())
            .unwrap_or_default();
        out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn stored_count(&self) -> usize {
        self.tables
            .read()
            .unwrap()
            .data
            .values()
            .map(|r| r.len())
            .sum()
    }
}

/// Parses a source response and validates every observation. One bad
/// record rejects the whole page.
pub fn parse_data_page(body: &[u8], expected: Option<&Pseudonym>) -> Result<DataPage> {
    let page: DataPage =
        serde_json::from_slice(body).map_err(|e| Error::Validation(format!("data page: {e}")))?;
    for o in &page.observations {
        o.validate()?;
        if o.resource_type() != page.resource_type {
            return Err(Error::Validation(format!(
                "observation {} has the wrong type",
                o.id
            )));
        }
        if let Some(p) = expected {
            if &o.pseudonym != p {
                return Err(Error::Validation(format!(
                    "observation {} is for another subject",
                    o.id
                )));
            }
        }
    }
    Ok(page)
}

/// Collects every page of a fetch given a page loader.
pub fn fetch_all(
    resource_type: &str,
    mut load: impl FnMut(Option<&str>) -> Result<Vec<u8>>,
    expected: Option<&Pseudonym>,
) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    let mut cursor: Option<String> = None;
    loop {
        let body = load(cursor.as_deref())?;
        let page = parse_data_page(&body, expected)?;
        if page.resource_type.as_str() != resource_type {
            return Err(Error::Validation(
                "response is for another resource type".into(),
            ));
        }
        out.extend(page.observations);
        match page.next_cursor {
            Some(next) => cursor = Some(next),
            None => return Ok(out),
        }
    }
}

/// Timestamp bounds as query parameters.
pub fn range_query(range: Option<&TimeRange>) -> Vec<(&'static str, String)> {
    match range {
        Some(r) => vec![("from", rfc3339(r.start)), ("to", rfc3339(r.end))],
        None => Vec::new(),
    }
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
