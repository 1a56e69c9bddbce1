//! Source-side enforcement: token verification, the introspection cache and
//! the denylist of identities that moved to another operator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::consent::token::decode_unverified;
use crate::consent::{
    check_access, verify_token, ConsentSnapshot, ConsentStatus, TimeRange, TokenClaims,
    VerificationKey,
};
use crate::error::{Error, Result};
use crate::ids::{ConsentId, EventId, OperatorId, Pseudonym, ServiceId};
use crate::operator::{EventPayload, Introspection, NotificationEvent};

/// Operator verification keys a service accepts tokens and events from.
#[derive(Debug, Default)]
pub struct OperatorKeys {
    keys: RwLock<BTreeMap<OperatorId, VerificationKey>>,
}

impl OperatorKeys {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trust(&self, operator_id: OperatorId, key: VerificationKey) {
        self.keys.write().unwrap().insert(operator_id, key);
    }

    pub fn get(&self, operator_id: &OperatorId) -> Option<VerificationKey> {
        self.keys.read().unwrap().get(operator_id).copied()
    }
}

/// Signature check and exactly-once filter for inbound notifications.
#[derive(Debug, Default)]
pub struct Inbox {
    seen: Mutex<HashSet<EventId>>,
}

impl Inbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// `Ok(false)` for a redelivery of an event already applied.
    pub fn accept(&self, keys: &OperatorKeys, event: &NotificationEvent) -> Result<bool> {
        let key = keys
            .get(&event.operator_id)
            .ok_or_else(|| Error::Forbidden(format!("unknown operator {}", event.operator_id)))?;
        event.verify(&key)?;
        Ok(self.seen.lock().unwrap().insert(event.event_id.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub status: ConsentStatus,
    pub version: u64,
    pub fetched_at: DateTime<Utc>,
}

/// Consent status learned from notices and introspection. An entry older than
/// the TTL is never used to allow a request; a revocation is terminal and is
/// honored regardless of age.
#[derive(Debug)]
pub struct ConsentCache {
    ttl: Duration,
    entries: Mutex<BTreeMap<ConsentId, CacheEntry>>,
}

impl ConsentCache {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Stores `status` unless a newer version is already known.
    pub fn record(
        &self,
        consent_id: &ConsentId,
        status: ConsentStatus,
        version: u64,
        at: DateTime<Utc>,
    ) -> bool {
        let mut entries = self.entries.lock().unwrap();
        match entries.get(consent_id) {
            Some(existing) if existing.version > version => false,
            Some(existing) if existing.status == ConsentStatus::Revoked => false,
            _ => {
                entries.insert(
                    consent_id.clone(),
                    CacheEntry {
                        status,
                        version,
                        fetched_at: at,
                    },
                );
                true
            }
        }
    }

    pub fn get(&self, consent_id: &ConsentId) -> Option<CacheEntry> {
        self.entries.lock().unwrap().get(consent_id).copied()
    }

    /// The status usable for a decision at `now`, if any.
    pub fn usable(&self, consent_id: &ConsentId, now: DateTime<Utc>) -> Option<ConsentStatus> {
        let entry = self.get(consent_id)?;
        if entry.status == ConsentStatus::Revoked || now - entry.fetched_at < self.ttl {
            Some(entry.status)
        } else {
            None
        }
    }

    pub fn revoke_all<'a>(&self, ids: impl IntoIterator<Item = &'a ConsentId>, at: DateTime<Utc>) {
        let mut entries = self.entries.lock().unwrap();
        for id in ids {
            let version = entries.get(id).map(|e| e.version).unwrap_or(0);
            entries.insert(
                id.clone(),
                CacheEntry {
                    status: ConsentStatus::Revoked,
                    version,
                    fetched_at: at,
                },
            );
        }
    }
}

#[derive(Debug, Clone)]
pub enum Authorization {
    /// Decided from the token and a usable cache entry.
    Granted(TokenClaims),
    /// The token is genuine but the consent's live status must be fetched.
    NeedsIntrospection(TokenClaims),
}

/// What a notice changed on the source side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceNotice {
    Cached(ConsentId),
    Erased(Pseudonym),
    Migrated { old: Pseudonym, new: Pseudonym },
    Ignored,
}

#[derive(Debug)]
pub struct AccessGuard {
    service_id: ServiceId,
    /// Ids the same service was given by other operators.
    aliases: RwLock<BTreeSet<ServiceId>>,
    cache: ConsentCache,
    migrated: RwLock<BTreeSet<(OperatorId, Pseudonym)>>,
}

impl AccessGuard {
    pub fn new(service_id: ServiceId, ttl: Duration) -> Self {
        Self {
            service_id,
            aliases: RwLock::new(BTreeSet::new()),
            cache: ConsentCache::new(ttl),
            migrated: RwLock::new(BTreeSet::new()),
        }
    }

    pub fn service_id(&self) -> &ServiceId {
        &self.service_id
    }

    /// Accepts `id` as this service too; a service registered at a second
    /// operator has a second id.
    pub fn add_identity(&self, id: ServiceId) {
        if id != self.service_id {
            self.aliases.write().unwrap().insert(id);
        }
    }

    pub fn is_me(&self, id: &ServiceId) -> bool {
        id == &self.service_id || self.aliases.read().unwrap().contains(id)
    }

    pub fn cache(&self) -> &ConsentCache {
        &self.cache
    }

    /// First phase of a data request: verifies the token and decides from
    /// the cache when it can.
    pub fn authorize(
        &self,
        keys: &OperatorKeys,
        token: &str,
        resource_type: &str,
        range: Option<&TimeRange>,
        now: DateTime<Utc>,
    ) -> Result<Authorization> {
        let (unverified, _, _) = decode_unverified(token.as_bytes())?;
        let key = keys
            .get(&unverified.operator_id)
            .ok_or(Error::TokenInvalid)?;
        let claims = verify_token(token.as_bytes(), &key, now)?;
        if !self.is_me(&claims.source_id) {
            return Err(Error::TokenInvalid);
        }
        if self
            .migrated
            .read()
            .unwrap()
            .contains(&(claims.operator_id.clone(), claims.pseudonym.clone()))
        {
            return Err(Error::OperatorMigrated);
        }
        match self.cache.usable(&claims.consent_id, now) {
            Some(status) => {
                check_access(&claims, resource_type, range, status).into_result()?;
                Ok(Authorization::Granted(claims))
            }
            None => Ok(Authorization::NeedsIntrospection(claims)),
        }
    }

    /// Second phase: records the operator's answer and decides. Any failure
    /// to reach the operator denies.
    pub fn complete(
        &self,
        claims: TokenClaims,
        resource_type: &str,
        range: Option<&TimeRange>,
        introspection: Result<Introspection>,
        now: DateTime<Utc>,
    ) -> Result<TokenClaims> {
        let status = match introspection {
            Ok(live) => {
                if live.consent_id != claims.consent_id || !self.is_me(&live.source_id) {
                    return Err(Error::TokenInvalid);
                }
                self.cache
                    .record(&live.consent_id, live.status, live.version, now);
                self.cache
                    .get(&live.consent_id)
                    .map(|e| e.status)
                    .unwrap_or(live.status)
            }
            Err(Error::NotFound(_)) => {
                self.cache.revoke_all([&claims.consent_id], now);
                ConsentStatus::Revoked
            }
            Err(e) => return Err(e),
        };
        check_access(&claims, resource_type, range, status).into_result()?;
        Ok(claims)
    }

    /// Both phases with a synchronous introspection call.
    pub fn authorize_with(
        &self,
        keys: &OperatorKeys,
        token: &str,
        resource_type: &str,
        range: Option<&TimeRange>,
        now: DateTime<Utc>,
        introspect: &mut dyn FnMut(&TokenClaims) -> Result<Introspection>,
    ) -> Result<TokenClaims> {
        match self.authorize(keys, token, resource_type, range, now)? {
            Authorization::Granted(claims) => Ok(claims),
            Authorization::NeedsIntrospection(claims) => {
                let live = introspect(&claims);
                self.complete(claims, resource_type, range, live, now)
            }
        }
    }

    pub fn apply_snapshot(&self, snapshot: &ConsentSnapshot, now: DateTime<Utc>) -> bool {
        self.is_me(&snapshot.source_id)
            && self
                .cache
                .record(&snapshot.consent_id, snapshot.status, snapshot.version, now)
    }

    /// Source-side effect of an authenticated notice.
    pub fn apply_notice(&self, event: &NotificationEvent, now: DateTime<Utc>) -> SourceNotice {
        match &event.payload {
            EventPayload::Consent { snapshot, .. } | EventPayload::Token { snapshot, .. } => {
                if self.apply_snapshot(snapshot, now) {
                    SourceNotice::Cached(snapshot.consent_id.clone())
                } else {
                    SourceNotice::Ignored
                }
            }
            EventPayload::AccountErased {
                service_pseudonym,
                consent_ids,
            } => {
                self.cache.revoke_all(consent_ids, now);
                SourceNotice::Erased(service_pseudonym.clone())
            }
            EventPayload::OperatorMigrated {
                old_operator_id,
                old_pseudonym,
                new_pseudonym,
                consent_map,
                ..
            } => {
                self.migrated
                    .write()
                    .unwrap()
                    .insert((old_operator_id.clone(), old_pseudonym.clone()));
                self.cache.revoke_all(consent_map.keys(), now);
                SourceNotice::Migrated {
                    old: old_pseudonym.clone(),
                    new: new_pseudonym.clone(),
                }
            }
        }
    }
}
