//! Consent domain model: services, links, consent records and the signed
//! artifacts derived from them. Nothing in here performs I/O or reads a clock.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AccountId, ConsentId, LinkId, Pseudonym, ServiceId};

pub mod access;
pub mod canonical;
pub mod keys;
pub mod lifecycle;
pub mod pseudonym;
pub mod receipt;
pub mod token;

pub use access::{check_access, AccessDecision, DenyReason};
pub use canonical::canonical_bytes;
pub use keys::{KeyMaterial, SignatureBytes, VerificationKey};
pub use lifecycle::{create_consent, transition_consent, ConsentParty, ConsentRequest};
pub use pseudonym::mint_pseudonym;
pub use receipt::{
    build_receipt, verify_receipt, ConsentReceipt, PurposeStatement, ReceiptContext,
};
pub use token::{issue_token, verify_token, AuthorizationToken, TokenClaims, TokenContext};

/// Token lifetime used when the caller does not configure one.
pub const DEFAULT_TOKEN_TTL_SECS: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceRole {
    Source,
    Sink,
    Both,
}

impl ServiceRole {
    pub fn is_source(self) -> bool {
        matches!(self, ServiceRole::Source | ServiceRole::Both)
    }

    pub fn is_sink(self) -> bool {
        matches!(self, ServiceRole::Sink | ServiceRole::Both)
    }
}

/// A service as published in the operator's registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDescriptor {
    pub service_id: ServiceId,
    pub name: String,
    pub role: ServiceRole,
    #[serde(default)]
    pub provided_resources: BTreeSet<String>,
    #[serde(default)]
    pub declared_purposes: BTreeSet<String>,
    /// Human-readable text for each declared purpose, shown on receipts.
    #[serde(default)]
    pub purpose_descriptions: BTreeMap<String, String>,
    /// Base URL; `/notices` and the data endpoints hang off it.
    pub callback_endpoint: String,
    /// Base64url ed25519 public key of the service.
    pub verification_key: String,
    pub registered_at: DateTime<Utc>,
}

impl ServiceDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidArgument("service name is empty".into()));
        }
        let needs_resources = self.role.is_source();
        let needs_purposes = self.role.is_sink();
        if needs_resources && self.provided_resources.is_empty() {
            return Err(Error::InvalidArgument(
                "a source must provide at least one resource type".into(),
            ));
        }
        if needs_purposes && self.declared_purposes.is_empty() {
            return Err(Error::InvalidArgument(
                "a sink must declare at least one purpose".into(),
            ));
        }
        if !needs_resources && !self.provided_resources.is_empty() {
            return Err(Error::InvalidArgument(
                "only sources may provide resource types".into(),
            ));
        }
        if !needs_purposes && !self.declared_purposes.is_empty() {
            return Err(Error::InvalidArgument(
                "only sinks may declare purposes".into(),
            ));
        }
        if self.provided_resources.iter().any(|r| r.trim().is_empty())
            || self.declared_purposes.iter().any(|p| p.trim().is_empty())
        {
            return Err(Error::InvalidArgument(
                "empty resource or purpose identifier".into(),
            ));
        }
        let url = reqwest::Url::parse(&self.callback_endpoint).map_err(|e| {
            Error::InvalidArgument(format!(
                "callback endpoint {:?}: {e}",
                self.callback_endpoint
            ))
        })?;
        if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none() {
            return Err(Error::InvalidArgument(format!(
                "callback endpoint {:?} must be an http(s) URL",
                self.callback_endpoint
            )));
        }
        VerificationKey::from_base64(&self.verification_key)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    Active,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceLink {
    pub link_id: LinkId,
    pub account_id: AccountId,
    pub service_id: ServiceId,
    pub pseudonym: Pseudonym,
    pub status: LinkStatus,
    pub created_at: DateTime<Utc>,
}

/// Half-open `[start, end)` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        let range = Self { start, end };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start < self.end {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "time range start {} is not before end {}",
                self.start, self.end
            )))
        }
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.start <= at && at < self.end
    }

    pub fn covers(&self, other: &TimeRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn minutes(&self) -> f64 {
        (self.end - self.start).num_milliseconds() as f64 / 60_000.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSet {
    pub resource_types: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
}

impl ResourceSet {
    pub fn new<I, S>(types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            resource_types: types.into_iter().map(Into::into).collect(),
            time_range: None,
        }
    }

    pub fn with_range(mut self, range: TimeRange) -> Self {
        self.time_range = Some(range);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resource_types.is_empty() {
            return Err(Error::InvalidArgument("resource set is empty".into()));
        }
        if let Some(range) = &self.time_range {
            range.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentStatus {
    Active,
    Paused,
    Revoked,
}

impl ConsentStatus {
    pub const ALL: [ConsentStatus; 3] = [
        ConsentStatus::Active,
        ConsentStatus::Paused,
        ConsentStatus::Revoked,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentAction {
    Pause,
    Resume,
    Revoke,
}

impl ConsentAction {
    pub const ALL: [ConsentAction; 3] = [
        ConsentAction::Pause,
        ConsentAction::Resume,
        ConsentAction::Revoke,
    ];
}

impl std::str::FromStr for ConsentAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pause" => Ok(ConsentAction::Pause),
            "resume" => Ok(ConsentAction::Resume),
            "revoke" => Ok(ConsentAction::Revoke),
            other => Err(Error::InvalidArgument(format!(
                "unknown consent action {other:?}"
            ))),
        }
    }
}

/// The authoritative record that one account lets one sink use a scoped set of
/// one source's data for the listed purposes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub consent_id: ConsentId,
    pub account_id: AccountId,
    pub source_link_id: LinkId,
    pub sink_link_id: LinkId,
    pub resource_set: ResourceSet,
    pub purposes: BTreeSet<String>,
    pub status: ConsentStatus,
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<DateTime<Utc>>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// What a service is told about a consent. Carries no account identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentSnapshot {
    pub consent_id: ConsentId,
    pub source_id: ServiceId,
    pub sink_id: ServiceId,
    pub resource_set: ResourceSet,
    pub purposes: BTreeSet<String>,
    pub status: ConsentStatus,
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<DateTime<Utc>>,
    pub updated_at: DateTime<Utc>,
}

impl ConsentSnapshot {
    pub fn of(record: &ConsentRecord, source_id: &ServiceId, sink_id: &ServiceId) -> Self {
        Self {
            consent_id: record.consent_id.clone(),
            source_id: source_id.clone(),
            sink_id: sink_id.clone(),
            resource_set: record.resource_set.clone(),
            purposes: record.purposes.clone(),
            status: record.status,
            version: record.version,
            expires_at: record.expires_at,
            updated_at: record.updated_at,
        }
    }
}
