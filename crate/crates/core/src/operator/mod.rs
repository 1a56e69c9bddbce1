//! The operator: accounts, service registry and consent brokering.
//!
//! All methods are synchronous and transport-agnostic. The HTTP layer in
//! [`crate::net`] and the in-memory bus in [`crate::flowsim`] drive the same
//! [`Operator`] value. Outbound notifications are written to an outbox in the
//! same transaction as the state change that caused them, which is what gives
//! per-consent version ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{Clock, SystemClock};
use crate::consent::lifecycle::{ConsentParty, ConsentRequest};
use crate::consent::token::decode_unverified;
use crate::consent::{
    build_receipt, create_consent, issue_token, mint_pseudonym, transition_consent, ConsentAction,
    ConsentReceipt, ConsentRecord, ConsentSnapshot, ConsentStatus, KeyMaterial, LinkStatus,
    ReceiptContext, ResourceSet, ServiceDescriptor, ServiceLink, ServiceRole, TokenContext,
    VerificationKey,
};
use crate::error::{Error, Result};
use crate::ids::{
    AccountId, ConsentId, EventId, IdSource, LinkId, OperatorId, RandomIds, ReceiptId, ServiceId,
};

pub mod config;
pub mod events;
pub mod portability;
pub mod store;

pub use config::{OperatorConfig, OperatorSettings, TrustedPeer};
pub use events::{EventKind, EventPayload, NotificationEvent};
pub use portability::{ImportResult, PortableAccountDocument};
pub use store::{
    AccountRecord, FileStore, MemoryStore, OutboxItem, RegistryEntry, Store, StoredReceipt, Tables,
    TrustStatus,
};

const MAX_CAS_ATTEMPTS: usize = 1000;
const MIN_CREDENTIAL_LEN: usize = 8;

/// Descriptions for well-known purposes, used when a sink registers without
/// supplying its own text.
pub fn default_purpose_description(purpose: &str) -> Option<&'static str> {
    Some(match purpose {
        "health-inference" => {
            "Infer health and wellness conditions from the shared data with a published rule set"
        }
        "guidance" => {
            "Give personal health and wellness guidance based on inferred recommendations"
        }
        "personal-health-record" => {
            "Keep the shared data in the individual's personal health record"
        }
        "research" => "Use the shared data in pseudonymized form for health research",
        _ => return None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorInfo {
    pub operator_id: OperatorId,
    pub verification_key: VerificationKey,
    pub introspection_ttl_secs: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceRegistration {
    pub name: String,
    pub role: ServiceRole,
    #[serde(default)]
    pub provided_resources: BTreeSet<String>,
    #[serde(default)]
    pub declared_purposes: BTreeSet<String>,
    #[serde(default)]
    pub purpose_descriptions: BTreeMap<String, String>,
    pub callback_endpoint: String,
    pub verification_key: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisteredService {
    pub entry: RegistryEntry,
    /// Shown once; the operator keeps only its hash.
    pub service_secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantRequest {
    pub source_link_id: LinkId,
    pub sink_link_id: LinkId,
    pub resource_set: ResourceSet,
    pub purposes: BTreeSet<String>,
    #[serde(default)]
    pub expires_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grant {
    pub record: ConsentRecord,
    pub receipt: ConsentReceipt,
    pub token: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrospectRequest {
    #[serde(default)]
    pub consent_id: Option<ConsentId>,
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Introspection {
    pub consent_id: ConsentId,
    pub status: ConsentStatus,
    pub version: u64,
    pub source_id: ServiceId,
    pub sink_id: ServiceId,
    pub resource_types: BTreeSet<String>,
    pub purposes: BTreeSet<String>,
    pub operator_id: OperatorId,
    pub cache_ttl_secs: u64,
    pub checked_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSummary {
    pub service_id: ServiceId,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsentView {
    pub record: ConsentRecord,
    pub receipt_id: Option<ReceiptId>,
    pub source: ServiceSummary,
    pub sink: ServiceSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErasureNotice {
    pub service_id: ServiceId,
    pub service_name: String,
    pub event_id: EventId,
    pub delivered: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PurgeCounts {
    pub links: usize,
    pub consents: usize,
    pub receipts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErasureReport {
    pub account_id: AccountId,
    pub revoked_consents: Vec<ConsentId>,
    pub notifications: Vec<ErasureNotice>,
    pub purged: PurgeCounts,
}

impl ErasureReport {
    pub fn undelivered(&self) -> impl Iterator<Item = &ErasureNotice> {
        self.notifications.iter().filter(|n| !n.delivered)
    }
}

/// One outbox item resolved to the callback it should be posted to.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub seq: u64,
    pub target: ServiceId,
    pub endpoint: String,
    pub event: NotificationEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DispatchSummary {
    pub delivered: usize,
    pub failed: usize,
    pub deferred: usize,
}

pub struct Operator {
    settings: OperatorSettings,
    keys: KeyMaterial,
    store: Arc<dyn Store>,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
}

impl std::fmt::Debug for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Operator")
            .field("operator_id", &self.settings.operator_id)
            .finish_non_exhaustive()
    }
}

struct Parties {
    source_link: ServiceLink,
    sink_link: ServiceLink,
    source: RegistryEntry,
    sink: RegistryEntry,
}

impl Operator {
    pub fn new(
        settings: OperatorSettings,
        keys: KeyMaterial,
        store: Arc<dyn Store>,
        clock: Arc<dyn Clock>,
        ids: Arc<dyn IdSource>,
    ) -> Self {
        Self {
            settings,
            keys,
            store,
            clock,
            ids,
        }
    }

    /// In-memory store, system clock, random ids.
    pub fn in_memory(settings: OperatorSettings, keys: KeyMaterial) -> Self {
        Self::new(
            settings,
            keys,
            Arc::new(MemoryStore::new()),
            Arc::new(SystemClock),
            Arc::new(RandomIds),
        )
    }

    pub fn operator_id(&self) -> &OperatorId {
        &self.settings.operator_id
    }

    pub fn settings(&self) -> &OperatorSettings {
        &self.settings
    }

    pub fn verification_key(&self) -> VerificationKey {
        self.keys.verification_key()
    }

    pub fn info(&self) -> OperatorInfo {
        OperatorInfo {
            operator_id: self.settings.operator_id.clone(),
            verification_key: self.keys.verification_key(),
            introspection_ttl_secs: self.settings.introspection_ttl_secs,
        }
    }

    pub fn store(&self) -> &dyn Store {
        self.store.as_ref()
    }

    #[cfg(test)]
    pub(crate) fn keys(&self) -> &KeyMaterial {
        &self.keys
    }

    pub(crate) fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub(crate) fn next_id(&self, prefix: &str) -> String {
        self.ids.next_id(prefix)
    }

    fn hash_secret(&self, secret: &str) -> String {
        let salt = self.ids.next_id("salt");
        format!("sha256${salt}${}", salted_digest(&salt, secret))
    }

    // ----- registry -----

    pub fn register_service(&self, registration: ServiceRegistration) -> Result<RegisteredService> {
        let mut descriptor = ServiceDescriptor {
            service_id: ServiceId(self.next_id("svc")),
            name: registration.name.trim().to_string(),
            role: registration.role,
            provided_resources: registration.provided_resources,
            declared_purposes: registration.declared_purposes,
            purpose_descriptions: registration.purpose_descriptions,
            callback_endpoint: registration
                .callback_endpoint
                .trim_end_matches('/')
                .to_string(),
            verification_key: registration.verification_key,
            registered_at: self.now(),
        };
        descriptor.validate()?;
        for purpose in &descriptor.declared_purposes {
            if !descriptor.purpose_descriptions.contains_key(purpose) {
                let text = default_purpose_description(purpose).ok_or_else(|| {
                    Error::InvalidArgument(format!("purpose {purpose:?} needs a description"))
                })?;
                descriptor
                    .purpose_descriptions
                    .insert(purpose.clone(), text.to_string());
            }
        }
        descriptor
            .purpose_descriptions
            .retain(|p, _| descriptor.declared_purposes.contains(p));

        let secret = hex::encode(Sha256::digest(self.next_id("secret").as_bytes()));
        let secret_hash = self.hash_secret(&secret);
        let entry = RegistryEntry {
            descriptor,
            trust_status: TrustStatus::Trusted,
        };
        let stored = entry.clone();
        self.store.update(move |t| {
            let duplicate = t.services.values().any(|e| {
                e.descriptor.name == stored.descriptor.name
                    && e.descriptor.callback_endpoint == stored.descriptor.callback_endpoint
            });
            if duplicate {
                return Err(Error::AlreadyRegistered(stored.descriptor.name.clone()));
            }
            let id = stored.descriptor.service_id.clone();
            t.service_secrets.insert(id.clone(), secret_hash);
            t.services.insert(id, stored);
            Ok(())
        })?;
        Ok(RegisteredService {
            entry,
            service_secret: secret,
        })
    }

    pub fn lookup_service(&self, service_id: &ServiceId) -> Result<RegistryEntry> {
        self.store
            .view(|t| t.services.get(service_id).cloned())
            .ok_or_else(|| Error::NotFound(format!("service {service_id}")))
    }

    pub fn list_services(&self) -> Vec<RegistryEntry> {
        self.store.view(|t| t.services.values().cloned().collect())
    }

    pub fn set_trust_status(
        &self,
        service_id: &ServiceId,
        status: TrustStatus,
    ) -> Result<RegistryEntry> {
        self.store.update(|t| {
            let entry = t
                .services
                .get_mut(service_id)
                .ok_or_else(|| Error::NotFound(format!("service {service_id}")))?;
            entry.trust_status = status;
            Ok(entry.clone())
        })
    }

    pub fn authenticate_service(
        &self,
        service_id: &ServiceId,
        secret: &str,
    ) -> Result<RegistryEntry> {
        let (entry, hash) = self.store.view(|t| {
            (
                t.services.get(service_id).cloned(),
                t.service_secrets.get(service_id).cloned(),
            )
        });
        match (entry, hash) {
            (Some(entry), Some(hash)) if verify_hash(&hash, secret) => Ok(entry),
            _ => Err(Error::Forbidden("service credential rejected".into())),
        }
    }

    // ----- accounts and links -----

    pub fn create_account(&self, display_name: &str, credential: &str) -> Result<AccountId> {
        if display_name.trim().is_empty() {
            return Err(Error::InvalidArgument("display name is empty".into()));
        }
        if credential.chars().count() < MIN_CREDENTIAL_LEN {
            return Err(Error::InvalidArgument(format!(
                "credential must be at least {MIN_CREDENTIAL_LEN} characters"
            )));
        }
        let record = AccountRecord {
            account_id: AccountId(self.next_id("acct")),
            display_name: display_name.trim().to_string(),
            credential_hash: self.hash_secret(credential),
            created_at: self.now(),
        };
        let id = record.account_id.clone();
        self.store.update(move |t| {
            if t.accounts.contains_key(&record.account_id) {
                return Err(Error::RetryConflict);
            }
            t.accounts.insert(record.account_id.clone(), record);
            Ok(())
        })?;
        Ok(id)
    }

    pub fn authenticate_account(&self, account_id: &AccountId, credential: &str) -> Result<()> {
        let hash = self
            .store
            .view(|t| {
                t.accounts
                    .get(account_id)
                    .map(|a| a.credential_hash.clone())
            })
            .ok_or_else(|| Error::NotFound(format!("account {account_id}")))?;
        if verify_hash(&hash, credential) {
            Ok(())
        } else {
            Err(Error::Forbidden("account credential rejected".into()))
        }
    }

    pub fn link_service(
        &self,
        account_id: &AccountId,
        service_id: &ServiceId,
    ) -> Result<ServiceLink> {
        let now = self.now();
        let link_id = LinkId(self.next_id("link"));
        let pseudonym = mint_pseudonym(account_id, service_id, self.keys.derivation_secret())?;
        self.store.update(move |t| {
            if !t.accounts.contains_key(account_id) {
                return Err(Error::NotFound(format!("account {account_id}")));
            }
            let entry = t
                .services
                .get(service_id)
                .ok_or_else(|| Error::NotFound(format!("service {service_id}")))?;
            if entry.trust_status != TrustStatus::Trusted {
                return Err(Error::ServiceUntrusted(entry.descriptor.name.clone()));
            }
            if let Some(existing) = t.links.values().find(|l| {
                &l.account_id == account_id
                    && &l.service_id == service_id
                    && l.status == LinkStatus::Active
            }) {
                return Ok(existing.clone());
            }
            let link = ServiceLink {
                link_id,
                account_id: account_id.clone(),
                service_id: service_id.clone(),
                pseudonym,
                status: LinkStatus::Active,
                created_at: now,
            };
            t.links.insert(link.link_id.clone(), link.clone());
            Ok(link)
        })
    }

    pub fn list_links(&self, account_id: &AccountId) -> Vec<ServiceLink> {
        self.store.view(|t| {
            t.links
                .values()
                .filter(|l| &l.account_id == account_id)
                .cloned()
                .collect()
        })
    }

    // ----- consents -----

    fn parties(t: &Tables, source_link: &LinkId, sink_link: &LinkId) -> Result<Parties> {
        let link = |id: &LinkId| {
            t.links
                .get(id)
                .cloned()
                .ok_or_else(|| Error::NotFound(format!("link {id}")))
        };
        let service = |id: &ServiceId| {
            t.services
                .get(id)
                .cloned()
                .ok_or_else(|| Error::NotFound(format!("service {id}")))
        };
        let source_link = link(source_link)?;
        let sink_link = link(sink_link)?;
        let source = service(&source_link.service_id)?;
        let sink = service(&sink_link.service_id)?;
        Ok(Parties {
            source_link,
            sink_link,
            source,
            sink,
        })
    }

    fn event(
        &self,
        kind: EventKind,
        consent: Option<(&ConsentId, u64)>,
        payload: EventPayload,
        now: DateTime<Utc>,
    ) -> Result<NotificationEvent> {
        NotificationEvent {
            event_id: EventId(self.next_id("evt")),
            operator_id: self.settings.operator_id.clone(),
            kind,
            consent_id: consent.map(|(id, _)| id.clone()),
            version: consent.map(|(_, v)| v),
            payload,
            issued_at: now,
            signature: None,
        }
        .signed(&self.keys)
    }

    fn token_for(
        &self,
        record: &ConsentRecord,
        parties: &Parties,
        now: DateTime<Utc>,
    ) -> Result<String> {
        let context = TokenContext {
            source_id: parties.source.descriptor.service_id.clone(),
            sink_id: parties.sink.descriptor.service_id.clone(),
            source_pseudonym: parties.source_link.pseudonym.clone(),
            operator_id: self.settings.operator_id.clone(),
        };
        Ok(issue_token(record, &context, &self.keys, now, self.settings.token_ttl)?.encode())
    }

    /// Events announcing `record` to both parties: a snapshot to the source and,
    /// when the consent is active, a fresh token to the sink.
    fn consent_events(
        &self,
        kind: EventKind,
        record: &ConsentRecord,
        parties: &Parties,
        now: DateTime<Utc>,
    ) -> Result<(NotificationEvent, NotificationEvent, Option<String>)> {
        let snapshot = ConsentSnapshot::of(
            record,
            &parties.source.descriptor.service_id,
            &parties.sink.descriptor.service_id,
        );
        let consent = Some((&record.consent_id, record.version));
        let to_source = self.event(
            kind,
            consent,
            EventPayload::Consent {
                snapshot: snapshot.clone(),
                service_pseudonym: parties.source_link.pseudonym.clone(),
            },
            now,
        )?;
        let (sink_payload, token) = if record.status == ConsentStatus::Active {
            let token = self.token_for(record, parties, now)?;
            (
                EventPayload::Token {
                    snapshot,
                    token: token.clone(),
                    service_pseudonym: parties.sink_link.pseudonym.clone(),
                    source_endpoint: parties.source.descriptor.callback_endpoint.clone(),
                },
                Some(token),
            )
        } else {
            (
                EventPayload::Consent {
                    snapshot,
                    service_pseudonym: parties.sink_link.pseudonym.clone(),
                },
                None,
            )
        };
        let to_sink = self.event(kind, consent, sink_payload, now)?;
        Ok((to_source, to_sink, token))
    }

    pub fn grant_consent(&self, account_id: &AccountId, request: GrantRequest) -> Result<Grant> {
        let now = self.now();
        let parties = self.store.view(|t| {
            if !t.accounts.contains_key(account_id) {
                return Err(Error::NotFound(format!("account {account_id}")));
            }
            Self::parties(t, &request.source_link_id, &request.sink_link_id)
        })?;
        for link in [&parties.source_link, &parties.sink_link] {
            if &link.account_id != account_id {
                return Err(Error::NotOwner);
            }
        }
        for entry in [&parties.source, &parties.sink] {
            if entry.trust_status != TrustStatus::Trusted {
                return Err(Error::ServiceUntrusted(entry.descriptor.name.clone()));
            }
        }
        let record = create_consent(
            ConsentId(self.next_id("cns")),
            ConsentRequest {
                account_id: account_id.clone(),
                resource_set: request.resource_set,
                purposes: request.purposes,
                expires_at: request.expires_at,
            },
            ConsentParty {
                link: &parties.source_link,
                service: &parties.source.descriptor,
            },
            ConsentParty {
                link: &parties.sink_link,
                service: &parties.sink.descriptor,
            },
            now,
        )?;
        let receipt = build_receipt(
            &record,
            &ReceiptContext {
                receipt_id: ReceiptId(self.next_id("rcpt")),
                subject_pseudonym: parties.sink_link.pseudonym.clone(),
                source_name: parties.source.descriptor.name.clone(),
                sink_name: parties.sink.descriptor.name.clone(),
                purpose_descriptions: parties.sink.descriptor.purpose_descriptions.clone(),
                jurisdiction: self.settings.jurisdiction.clone(),
                collection_method: "explicit grant through operator account".into(),
                operator_id: self.settings.operator_id.clone(),
            },
            now,
            &self.keys,
        )?;
        let (to_source, to_sink, token) =
            self.consent_events(EventKind::ConsentGranted, &record, &parties, now)?;
        let token = token.expect("active consent always yields a token");

        let stored = (record.clone(), receipt.clone());
        let source_id = parties.source.descriptor.service_id.clone();
        let sink_id = parties.sink.descriptor.service_id.clone();
        self.store.update(move |t| {
            let (record, receipt) = stored;
            for id in [&record.source_link_id, &record.sink_link_id] {
                match t.links.get(id) {
                    Some(l) if l.status == LinkStatus::Active => {}
                    _ => return Err(Error::LinkInactive(id.to_string())),
                }
            }
            if t.consents.contains_key(&record.consent_id) {
                return Err(Error::RetryConflict);
            }
            t.receipts.insert(
                receipt.receipt_id.clone(),
                StoredReceipt {
                    consent_id: record.consent_id.clone(),
                    receipt,
                },
            );
            t.consents.insert(record.consent_id.clone(), record);
            t.enqueue(source_id, to_source);
            t.enqueue(sink_id, to_sink);
            Ok(())
        })?;
        Ok(Grant {
            record,
            receipt,
            token,
        })
    }

    /// Applies a status action with optimistic concurrency: the transition is
    /// computed outside the store lock and committed only if the stored
    /// version is unchanged, retrying otherwise.
    pub fn set_consent_status(
        &self,
        account_id: &AccountId,
        consent_id: &ConsentId,
        action: ConsentAction,
    ) -> Result<ConsentRecord> {
        for _ in 0..MAX_CAS_ATTEMPTS {
            let (current, parties) = self.store.view(|t| {
                let record = t
                    .consents
                    .get(consent_id)
                    .cloned()
                    .ok_or_else(|| Error::NotFound(format!("consent {consent_id}")))?;
                let parties = Self::parties(t, &record.source_link_id, &record.sink_link_id)?;
                Ok::<_, Error>((record, parties))
            })?;
            if &current.account_id != account_id {
                return Err(Error::NotOwner);
            }
            let now = self.now();
            let next = transition_consent(&current, action, now)?;
            let (to_source, to_sink, _) =
                self.consent_events(EventKind::ConsentStatusChanged, &next, &parties, now)?;
            let committed = next.clone();
            let source_id = parties.source.descriptor.service_id.clone();
            let sink_id = parties.sink.descriptor.service_id.clone();
            let outcome = self.store.update(move |t| {
                match t.consents.get(&committed.consent_id) {
                    Some(stored) if stored.version == current.version => {}
                    Some(_) => return Err(Error::RetryConflict),
                    None => {
                        return Err(Error::NotFound(format!("consent {}", committed.consent_id)))
                    }
                }
                t.consents.insert(committed.consent_id.clone(), committed);
                t.enqueue(source_id, to_source);
                t.enqueue(sink_id, to_sink);
                Ok(())
            });
            match outcome {
                Ok(()) => return Ok(next),
                Err(Error::RetryConflict) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::RetryConflict)
    }

    pub fn introspect(
        &self,
        caller: &ServiceId,
        secret: &str,
        request: &IntrospectRequest,
    ) -> Result<Introspection> {
        self.authenticate_service(caller, secret)?;
        let consent_id = match (&request.consent_id, &request.token) {
            (Some(id), _) => id.clone(),
            (None, Some(token)) => {
                let (claims, bytes, signature) = decode_unverified(token.as_bytes())?;
                self.keys.verification_key().verify(&bytes, &signature)?;
                claims.consent_id
            }
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "consent_id or token is required".into(),
                ))
            }
        };
        let now = self.now();
        self.store.view(|t| {
            let record = t
                .consents
                .get(&consent_id)
                .ok_or_else(|| Error::NotFound(format!("consent {consent_id}")))?;
            let parties = Self::parties(t, &record.source_link_id, &record.sink_link_id)?;
            let source_id = parties.source.descriptor.service_id;
            let sink_id = parties.sink.descriptor.service_id;
            if caller != &source_id && caller != &sink_id {
                return Err(Error::Forbidden(
                    "caller is not a party to this consent".into(),
                ));
            }
            Ok(Introspection {
                consent_id: record.consent_id.clone(),
                status: record.status,
                version: record.version,
                source_id,
                sink_id,
                resource_types: record.resource_set.resource_types.clone(),
                purposes: record.purposes.clone(),
                operator_id: self.settings.operator_id.clone(),
                cache_ttl_secs: self.settings.introspection_ttl_secs,
                checked_at: now,
            })
        })
    }

    pub fn list_consents(&self, account_id: &AccountId) -> Result<Vec<ConsentView>> {
        self.store.view(|t| {
            if !t.accounts.contains_key(account_id) {
                return Err(Error::NotFound(format!("account {account_id}")));
            }
            let mut views = t
                .consents
                .values()
                .filter(|c| &c.account_id == account_id)
                .map(|record| {
                    let parties = Self::parties(t, &record.source_link_id, &record.sink_link_id)?;
                    let receipt_id =
                        latest_receipt(t, &record.consent_id).map(|r| r.receipt_id.clone());
                    Ok(ConsentView {
                        record: record.clone(),
                        receipt_id,
                        source: summary(&parties.source),
                        sink: summary(&parties.sink),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            views.sort_by(|a, b| {
                b.record
                    .updated_at
                    .cmp(&a.record.updated_at)
                    .then_with(|| a.record.consent_id.cmp(&b.record.consent_id))
            });
            Ok(views)
        })
    }

    pub fn receipt(
        &self,
        account_id: &AccountId,
        consent_id: &ConsentId,
    ) -> Result<ConsentReceipt> {
        self.store.view(|t| {
            let record = t
                .consents
                .get(consent_id)
                .ok_or_else(|| Error::NotFound(format!("consent {consent_id}")))?;
            if &record.account_id != account_id {
                return Err(Error::NotOwner);
            }
            latest_receipt(t, consent_id)
                .cloned()
                .ok_or_else(|| Error::NotFound(format!("receipt for {consent_id}")))
        })
    }

    // ----- erasure -----

    pub fn delete_account(&self, account_id: &AccountId) -> Result<ErasureReport> {
        for _ in 0..MAX_CAS_ATTEMPTS {
            match self.try_delete_account(account_id) {
                Err(Error::RetryConflict) => continue,
                other => return other,
            }
        }
        Err(Error::RetryConflict)
    }

    fn try_delete_account(&self, account_id: &AccountId) -> Result<ErasureReport> {
        let now = self.now();
        let (links, consents) = self.store.view(|t| {
            if !t.accounts.contains_key(account_id) {
                return Err(Error::NotFound(format!("account {account_id}")));
            }
            let links: Vec<ServiceLink> = t
                .links
                .values()
                .filter(|l| &l.account_id == account_id)
                .cloned()
                .collect();
            let consents = t
                .consents
                .values()
                .filter(|c| &c.account_id == account_id)
                .map(|c| {
                    Ok((
                        c.clone(),
                        Self::parties(t, &c.source_link_id, &c.sink_link_id)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((links, consents))
        })?;

        let mut queued: Vec<(ServiceId, NotificationEvent)> = Vec::new();
        let mut revoked = Vec::new();
        let mut expected_versions = BTreeMap::new();
        for (record, parties) in &consents {
            expected_versions.insert(record.consent_id.clone(), record.version);
            if record.status == ConsentStatus::Revoked {
                continue;
            }
            let next = transition_consent(record, ConsentAction::Revoke, now)?;
            let (to_source, to_sink, _) =
                self.consent_events(EventKind::ConsentStatusChanged, &next, parties, now)?;
            queued.push((parties.source.descriptor.service_id.clone(), to_source));
            queued.push((parties.sink.descriptor.service_id.clone(), to_sink));
            revoked.push(next.consent_id.clone());
        }

        let services = self.store.view(|t| t.services.clone());
        let mut notices = Vec::new();
        let mut seen = BTreeSet::new();
        for link in &links {
            if !seen.insert(link.service_id.clone()) {
                continue;
            }
            let consent_ids = consents
                .iter()
                .filter(|(_, p)| {
                    p.source_link.service_id == link.service_id
                        || p.sink_link.service_id == link.service_id
                })
                .map(|(c, _)| c.consent_id.clone())
                .collect();
            let event = self.event(
                EventKind::AccountErased,
                None,
                EventPayload::AccountErased {
                    service_pseudonym: link.pseudonym.clone(),
                    consent_ids,
                },
                now,
            )?;
            notices.push(ErasureNotice {
                service_id: link.service_id.clone(),
                service_name: services
                    .get(&link.service_id)
                    .map(|e| e.descriptor.name.clone())
                    .unwrap_or_default(),
                event_id: event.event_id.clone(),
                delivered: false,
            });
            queued.push((link.service_id.clone(), event));
        }

        let purged = self.store.update(|t| {
            for (id, version) in &expected_versions {
                match t.consents.get(id) {
                    Some(c) if c.version == *version => {}
                    _ => return Err(Error::RetryConflict),
                }
            }
            if t.links
                .values()
                .filter(|l| &l.account_id == account_id)
                .count()
                != links.len()
            {
                return Err(Error::RetryConflict);
            }
            for (target, event) in queued {
                t.enqueue(target, event);
            }
            let before = (t.links.len(), t.consents.len(), t.receipts.len());
            t.accounts.remove(account_id);
            t.links.retain(|_, l| &l.account_id != account_id);
            t.consents.retain(|_, c| &c.account_id != account_id);
            let consents = &t.consents;
            t.receipts
                .retain(|_, r| consents.contains_key(&r.consent_id));
            Ok(PurgeCounts {
                links: before.0 - t.links.len(),
                consents: before.1 - t.consents.len(),
                receipts: before.2 - t.receipts.len(),
            })
        })?;

        Ok(ErasureReport {
            account_id: account_id.clone(),
            revoked_consents: revoked,
            notifications: notices,
            purged,
        })
    }

    // ----- notification outbox -----

    /// Pending deliveries in outbox order.
    pub fn pending_deliveries(&self) -> Vec<Delivery> {
        self.store.view(|t| {
            t.outbox
                .iter()
                .map(|item| Delivery {
                    seq: item.seq,
                    target: item.target.clone(),
                    endpoint: t
                        .services
                        .get(&item.target)
                        .map(|e| e.descriptor.callback_endpoint.clone())
                        .unwrap_or_default(),
                    event: item.event.clone(),
                })
                .collect()
        })
    }

    pub fn mark_delivered(&self, seq: u64) -> Result<()> {
        self.store.update(|t| {
            t.outbox.retain(|item| item.seq != seq);
            Ok(())
        })
    }

    pub fn mark_failed(&self, seq: u64) -> Result<()> {
        self.store.update(|t| {
            if let Some(item) = t.outbox.iter_mut().find(|item| item.seq == seq) {
                item.attempts += 1;
            }
            Ok(())
        })
    }

    pub fn is_pending(&self, event_id: &EventId) -> bool {
        self.store
            .view(|t| t.outbox.iter().any(|i| &i.event.event_id == event_id))
    }

    /// Delivers pending notifications in order. A failure holds back every
    /// later event for the same target so services never see versions out of order.
    pub fn dispatch_with(
        &self,
        deliver: &mut dyn FnMut(&Delivery) -> Result<()>,
    ) -> DispatchSummary {
        let mut summary = DispatchSummary::default();
        let mut blocked = BTreeSet::new();
        for delivery in self.pending_deliveries() {
            if blocked.contains(&delivery.target) {
                summary.deferred += 1;
                continue;
            }
            match deliver(&delivery) {
                Ok(()) => {
                    summary.delivered += 1;
                    let _ = self.mark_delivered(delivery.seq);
                }
                Err(_) => {
                    summary.failed += 1;
                    let _ = self.mark_failed(delivery.seq);
                    blocked.insert(delivery.target.clone());
                }
            }
        }
        summary
    }

    /// Fills in `delivered` flags from the current outbox.
    pub fn refresh_erasure_report(&self, report: &mut ErasureReport) {
        for notice in &mut report.notifications {
            notice.delivered = !self.is_pending(&notice.event_id);
        }
    }
}

fn summary(entry: &RegistryEntry) -> ServiceSummary {
    ServiceSummary {
        service_id: entry.descriptor.service_id.clone(),
        name: entry.descriptor.name.clone(),
    }
}

fn latest_receipt<'a>(t: &'a Tables, consent_id: &ConsentId) -> Option<&'a ConsentReceipt> {
    t.receipts
        .values()
        .filter(|r| &r.consent_id == consent_id)
        .map(|r| &r.receipt)
        .max_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.receipt_id.cmp(&b.receipt_id))
        })
}

fn salted_digest(salt: &str, secret: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(salt.as_bytes());
    hasher.update([0u8]);
    hasher.update(secret.as_bytes());
    hex::encode(hasher.finalize())
}

fn verify_hash(stored: &str, secret: &str) -> bool {
    let mut parts = stored.splitn(3, '$');
    match (parts.next(), parts.next(), parts.next()) {
        (Some("sha256"), Some(salt), Some(digest)) => {
            let actual = salted_digest(salt, secret);
            // constant-time compare
            actual.len() == digest.len()
                && actual
                    .bytes()
                    .zip(digest.bytes())
                    .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                    == 0
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests;
