//! Account export and import between operators.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventPayload};
use super::store::{AccountRecord, StoredReceipt};
use super::{Operator, Parties, TrustStatus};
use crate::consent::canonical::canonical_bytes;
use crate::consent::{
    mint_pseudonym, ConsentReceipt, ConsentRecord, ConsentStatus, LinkStatus, ServiceLink,
    ServiceRole, SignatureBytes, VerificationKey,
};
use crate::error::{Error, Result};
use crate::ids::{AccountId, ConsentId, LinkId, OperatorId, ServiceId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedAccount {
    pub account_id: AccountId,
    pub display_name: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedService {
    pub service_id: ServiceId,
    pub name: String,
    pub role: ServiceRole,
    pub callback_endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedConsent {
    pub record: ConsentRecord,
    pub receipts: Vec<ConsentReceipt>,
}

/// Everything an operator knows about one account, signed by that operator.
/// Holds consent metadata only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortableAccountDocument {
    pub schema_version: u32,
    pub exporting_operator_id: OperatorId,
    pub account: ExportedAccount,
    pub services: Vec<ExportedService>,
    pub links: Vec<ServiceLink>,
    pub consents: Vec<ExportedConsent>,
    pub exported_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureBytes>,
}

impl PortableAccountDocument {
    pub fn signing_bytes(&self) -> Result<Vec<u8>> {
        let mut unsigned = self.clone();
        unsigned.signature = None;
        canonical_bytes(&unsigned)
    }

    pub fn verify(&self, key: &VerificationKey) -> Result<()> {
        let signature = self
            .signature
            .as_ref()
            .ok_or_else(|| Error::InvalidDocument("document is unsigned".into()))?;
        key.verify(&self.signing_bytes()?, signature)
            .map_err(|_| Error::InvalidDocument("signature does not verify".into()))
    }

    /// Parses and structurally checks a document received as bytes.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::InvalidDocument(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportResult {
    pub account_id: AccountId,
    pub consent_map: BTreeMap<ConsentId, ConsentId>,
    pub links: usize,
}

impl Operator {
    pub fn export_account(&self, account_id: &AccountId) -> Result<PortableAccountDocument> {
        let now = self.now();
        let mut doc = self.store.view(|t| {
            let account = t
                .accounts
                .get(account_id)
                .ok_or_else(|| Error::NotFound(format!("account {account_id}")))?;
            let links: Vec<ServiceLink> = t
                .links
                .values()
                .filter(|l| &l.account_id == account_id)
                .cloned()
                .collect();
            let mut services = Vec::new();
            for link in &links {
                let entry = t
                    .services
                    .get(&link.service_id)
                    .ok_or_else(|| Error::NotFound(format!("service {}", link.service_id)))?;
                if !services
                    .iter()
                    .any(|s: &ExportedService| s.service_id == link.service_id)
                {
                    services.push(ExportedService {
                        service_id: entry.descriptor.service_id.clone(),
                        name: entry.descriptor.name.clone(),
                        role: entry.descriptor.role,
                        callback_endpoint: entry.descriptor.callback_endpoint.clone(),
                    });
                }
            }
            let consents = t
                .consents
                .values()
                .filter(|c| &c.account_id == account_id)
                .map(|record| {
                    let mut receipts: Vec<ConsentReceipt> = t
                        .receipts
                        .values()
                        .filter(|r| r.consent_id == record.consent_id)
                        .map(|r| r.receipt.clone())
                        .collect();
                    receipts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
                    ExportedConsent {
                        record: record.clone(),
                        receipts,
                    }
                })
                .collect();
            Ok::<_, Error>(PortableAccountDocument {
                schema_version: SCHEMA_VERSION,
                exporting_operator_id: self.settings.operator_id.clone(),
                account: ExportedAccount {
                    account_id: account.account_id.clone(),
                    display_name: account.display_name.clone(),
                    created_at: account.created_at,
                },
                services,
                links,
                consents,
                exported_at: now,
                signature: None,
            })
        })?;
        doc.signature = Some(self.keys.sign(&doc.signing_bytes()?));
        Ok(doc)
    }

    /// Recreates an account exported by a trusted peer. Links get pseudonyms
    /// minted under this operator's secret, consents get fresh ids, and every
    /// linked service is told to stop honoring the exporter's tokens.
    pub fn import_account(
        &self,
        doc: &PortableAccountDocument,
        credential: &str,
    ) -> Result<ImportResult> {
        let peer_key = self
            .settings
            .trusted_peers
            .get(&doc.exporting_operator_id)
            .ok_or_else(|| Error::UntrustedOperator(doc.exporting_operator_id.to_string()))?;
        doc.verify(peer_key)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidDocument(format!(
                "unsupported schema version {}",
                doc.schema_version
            )));
        }
        let old_account = &doc.account.account_id;
        if doc.links.iter().any(|l| &l.account_id != old_account)
            || doc
                .consents
                .iter()
                .any(|c| &c.record.account_id != old_account)
        {
            return Err(Error::InvalidDocument(
                "records reference another account".into(),
            ));
        }

        // Resolve exported services against the local registry.
        let registry = self.store.view(|t| t.services.clone());
        let mut service_map: BTreeMap<ServiceId, ServiceId> = BTreeMap::new();
        for exported in &doc.services {
            let local = registry
                .values()
                .find(|e| {
                    e.descriptor.name == exported.name
                        && e.descriptor.callback_endpoint == exported.callback_endpoint
                })
                .ok_or_else(|| {
                    Error::InvalidDocument(format!(
                        "service {} is not registered here",
                        exported.name
                    ))
                })?;
            if local.trust_status != TrustStatus::Trusted {
                return Err(Error::ServiceUntrusted(local.descriptor.name.clone()));
            }
            service_map.insert(
                exported.service_id.clone(),
                local.descriptor.service_id.clone(),
            );
        }

        if credential.chars().count() < super::MIN_CREDENTIAL_LEN {
            return Err(Error::InvalidArgument("credential is too short".into()));
        }
        let now = self.now();
        let account_id = AccountId(self.next_id("acct"));
        let account = AccountRecord {
            account_id: account_id.clone(),
            display_name: doc.account.display_name.clone(),
            credential_hash: self.hash_secret(credential),
            created_at: now,
        };

        let mut link_map: BTreeMap<LinkId, ServiceLink> = BTreeMap::new();
        for old in &doc.links {
            let service_id = service_map.get(&old.service_id).ok_or_else(|| {
                Error::InvalidDocument(format!("link {} names an unlisted service", old.link_id))
            })?;
            let link = ServiceLink {
                link_id: LinkId(self.next_id("link")),
                account_id: account_id.clone(),
                service_id: service_id.clone(),
                pseudonym: mint_pseudonym(&account_id, service_id, self.keys.derivation_secret())?,
                status: old.status,
                created_at: now,
            };
            link_map.insert(old.link_id.clone(), link);
        }

        let mut consent_map = BTreeMap::new();
        let mut records = Vec::new();
        let mut receipts = Vec::new();
        for exported in &doc.consents {
            let old = &exported.record;
            let resolve = |id: &LinkId| {
                link_map.get(id).map(|l| l.link_id.clone()).ok_or_else(|| {
                    Error::InvalidDocument(format!(
                        "consent {} names unknown link {id}",
                        old.consent_id
                    ))
                })
            };
            let record = ConsentRecord {
                consent_id: ConsentId(self.next_id("cns")),
                account_id: account_id.clone(),
                source_link_id: resolve(&old.source_link_id)?,
                sink_link_id: resolve(&old.sink_link_id)?,
                ..old.clone()
            };
            consent_map.insert(old.consent_id.clone(), record.consent_id.clone());
            for receipt in &exported.receipts {
                receipts.push(StoredReceipt {
                    consent_id: record.consent_id.clone(),
                    receipt: receipt.clone(),
                });
            }
            records.push(record);
        }

        // Migration notices go first so services re-key before new grants arrive.
        let mut queued = Vec::new();
        for old in &doc.links {
            let new = &link_map[&old.link_id];
            let scoped: BTreeMap<ConsentId, ConsentId> = doc
                .consents
                .iter()
                .filter(|c| {
                    c.record.source_link_id == old.link_id || c.record.sink_link_id == old.link_id
                })
                .map(|c| {
                    (
                        c.record.consent_id.clone(),
                        consent_map[&c.record.consent_id].clone(),
                    )
                })
                .collect();
            let event = self.event(
                EventKind::OperatorMigrated,
                None,
                EventPayload::OperatorMigrated {
                    old_operator_id: doc.exporting_operator_id.clone(),
                    new_operator_id: self.settings.operator_id.clone(),
                    old_pseudonym: old.pseudonym.clone(),
                    new_pseudonym: new.pseudonym.clone(),
                    consent_map: scoped,
                },
                now,
            )?;
            queued.push((new.service_id.clone(), event));
        }
        let new_links: BTreeMap<LinkId, ServiceLink> = link_map
            .values()
            .map(|l| (l.link_id.clone(), l.clone()))
            .collect();
        for record in records.iter().filter(|r| r.status == ConsentStatus::Active) {
            let source_link = new_links[&record.source_link_id].clone();
            let sink_link = new_links[&record.sink_link_id].clone();
            if source_link.status != LinkStatus::Active || sink_link.status != LinkStatus::Active {
                continue;
            }
            let parties = Parties {
                source: registry[&source_link.service_id].clone(),
                sink: registry[&sink_link.service_id].clone(),
                source_link,
                sink_link,
            };
            let (to_source, to_sink, _) =
                self.consent_events(EventKind::ConsentGranted, record, &parties, now)?;
            queued.push((parties.source.descriptor.service_id.clone(), to_source));
            queued.push((parties.sink.descriptor.service_id.clone(), to_sink));
        }

        let link_count = new_links.len();
        self.store.update(move |t| {
            if t.accounts.contains_key(&account.account_id) {
                return Err(Error::RetryConflict);
            }
            t.accounts.insert(account.account_id.clone(), account);
            t.links.extend(new_links);
            for record in records {
                t.consents.insert(record.consent_id.clone(), record);
            }
            for stored in receipts {
                t.receipts.insert(stored.receipt.receipt_id.clone(), stored);
            }
            for (target, event) in queued {
                t.enqueue(target, event);
            }
            Ok(())
        })?;

        Ok(ImportResult {
            account_id,
            consent_map,
            links: link_count,
        })
    }
}
