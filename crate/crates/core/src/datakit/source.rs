//! A source that serves stored observations under live consent.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::guard::{AccessGuard, Authorization, Inbox, OperatorKeys, SourceNotice};
use super::observation::{Observation, ResourceType};
use crate::consent::{TimeRange, TokenClaims};
use crate::error::{Error, Result};
use crate::ids::{Pseudonym, ServiceId};
use crate::operator::{Introspection, NotificationEvent};

pub const PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPage {
    pub resource_type: ResourceType,
    pub observations: Vec<Observation>,
    /// Opaque continuation; absent on the last page.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoticeAck {
    pub event_id: crate::ids::EventId,
    pub applied: bool,
}

#[derive(Debug, Clone)]
pub struct DataRequest {
    pub token: String,
    pub resource_type: String,
    pub time_range: Option<TimeRange>,
    pub cursor: Option<String>,
}

/// Observations keyed by pseudonym. Readers get a snapshot; writers swap
/// whole per-pseudonym vectors.
#[derive(Debug, Default)]
pub struct ObservationStore {
    rows: RwLock<BTreeMap<Pseudonym, Arc<Vec<Observation>>>>,
}

impl ObservationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces observations by id. Returns how many were new.
    pub fn upsert(&self, observations: impl IntoIterator<Item = Observation>) -> usize {
        let mut grouped: BTreeMap<Pseudonym, Vec<Observation>> = BTreeMap::new();
        for o in observations {
            grouped.entry(o.pseudonym.clone()).or_default().push(o);
        }
        let mut rows = self.rows.write().unwrap();
        let mut added = 0;
        for (pseudonym, batch) in grouped {
            let mut merged: BTreeMap<String, Observation> = rows
                .get(&pseudonym)
                .map(|v| v.iter().map(|o| (o.id.clone(), o.clone())).collect())
                .unwrap_or_default();
            for o in batch {
                if merged.insert(o.id.clone(), o).is_none() {
                    added += 1;
                }
            }
            let mut list: Vec<Observation> = merged.into_values().collect();
            list.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
            rows.insert(pseudonym, Arc::new(list));
        }
        added
    }

    pub fn snapshot(&self, pseudonym: &Pseudonym) -> Arc<Vec<Observation>> {
        self.rows
            .read()
            .unwrap()
            .get(pseudonym)
            .cloned()
            .unwrap_or_default()
    }

    pub fn count(&self) -> usize {
        self.rows.read().unwrap().values().map(|v| v.len()).sum()
    }

    pub fn pseudonyms(&self) -> Vec<Pseudonym> {
        self.rows.read().unwrap().keys().cloned().collect()
    }

    /// Moves every observation of `old` under `new`.
    pub fn rekey(&self, old: &Pseudonym, new: &Pseudonym) -> usize {
        let moved = self.rows.write().unwrap().remove(old);
        match moved {
            Some(list) => {
                let n = list.len();
                self.upsert(list.iter().cloned().map(|mut o| {
                    o.pseudonym = new.clone();
                    o
                }));
                n
            }
            None => 0,
        }
    }

    /// Observations of one type, optionally bounded by `[start, end)`, one page at a time.
    pub fn page(
        &self,
        pseudonym: &Pseudonym,
        resource_type: ResourceType,
        range: Option<&TimeRange>,
        cursor: Option<&str>,
        page_size: usize,
    ) -> Result<DataPage> {
        let offset = match cursor {
            None => 0,
            Some(c) => c
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad cursor {c:?}")))?,
        };
        let snapshot = self.snapshot(pseudonym);
        let mut matching = snapshot
            .iter()
            .filter(|o| o.resource_type() == resource_type)
            .filter(|o| range.map_or(true, |r| r.contains(o.timestamp)))
            .skip(offset);
        let observations: Vec<Observation> = matching.by_ref().take(page_size).cloned().collect();
        let next_cursor = matching
            .next()
            .map(|_| (offset + observations.len()).to_string());
        Ok(DataPage {
            resource_type,
            observations,
            next_cursor,
        })
    }
}

/// A data source: guard plus store plus the notice inbox.
#[derive(Debug)]
pub struct DataSource {
    pub guard: AccessGuard,
    pub store: ObservationStore,
    pub keys: Arc<OperatorKeys>,
    inbox: Inbox,
    page_size: usize,
}

impl DataSource {
    pub fn new(service_id: ServiceId, keys: Arc<OperatorKeys>, cache_ttl: Duration) -> Self {
        Self {
            guard: AccessGuard::new(service_id, cache_ttl),
            store: ObservationStore::new(),
            keys,
            inbox: Inbox::new(),
            page_size: PAGE_SIZE,
        }
    }

    pub fn with_page_size(mut self, page_size: usize) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    pub fn service_id(&self) -> &ServiceId {
        self.guard.service_id()
    }

    pub fn add_identity(&self, id: ServiceId) {
        self.guard.add_identity(id);
    }

    pub fn apply_notice(&self, event: &NotificationEvent, now: DateTime<Utc>) -> Result<NoticeAck> {
        let applied = self.inbox.accept(&self.keys, event)?;
        if applied {
            if let SourceNotice::Migrated { old, new } = self.guard.apply_notice(event, now) {
                self.store.rekey(&old, &new);
            }
        }
        Ok(NoticeAck {
            event_id: event.event_id.clone(),
            applied,
        })
    }

    pub fn authorize(&self, request: &DataRequest, now: DateTime<Utc>) -> Result<Authorization> {
        self.guard.authorize(
            &self.keys,
            &request.token,
            &request.resource_type,
            request.time_range.as_ref(),
            now,
        )
    }

    pub fn complete(
        &self,
        claims: TokenClaims,
        request: &DataRequest,
        introspection: Result<Introspection>,
        now: DateTime<Utc>,
    ) -> Result<TokenClaims> {
        self.guard.complete(
            claims,
            &request.resource_type,
            request.time_range.as_ref(),
            introspection,
            now,
        )
    }

    /// Reads data for claims that already passed both checks.
    pub fn serve(&self, claims: &TokenClaims, request: &DataRequest) -> Result<DataPage> {
        let resource_type: ResourceType = request
            .resource_type
            .parse()
            .map_err(|_| Error::OutOfScope)?;
        self.store.page(
            &claims.pseudonym,
            resource_type,
            request.time_range.as_ref(),
            request.cursor.as_deref(),
            self.page_size,
        )
    }

    /// The whole request with a synchronous introspection callback.
    pub fn handle_data_request(
        &self,
        request: &DataRequest,
        now: DateTime<Utc>,
        introspect: &mut dyn FnMut(&TokenClaims) -> Result<Introspection>,
    ) -> Result<DataPage> {
        if let Some(range) = &request.time_range {
            range.validate()?;
        }
        let claims = self.guard.authorize_with(
            &self.keys,
            &request.token,
            &request.resource_type,
            request.time_range.as_ref(),
            now,
            introspect,
        )?;
        self.serve(&claims, request)
    }
}
