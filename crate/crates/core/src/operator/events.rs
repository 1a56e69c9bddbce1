//! Signed notifications pushed from the operator to service callbacks.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::consent::canonical::canonical_bytes;
use crate::consent::{ConsentSnapshot, KeyMaterial, SignatureBytes, VerificationKey};
use crate::error::{Error, Result};
use crate::ids::{ConsentId, EventId, OperatorId, Pseudonym};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ConsentGranted,
    ConsentStatusChanged,
    AccountErased,
    OperatorMigrated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    /// Protection side: the source learns the consent's scope and status.
    Consent {
        snapshot: ConsentSnapshot,
        /// The receiving service's own pseudonym for the account.
        service_pseudonym: Pseudonym,
    },
    /// Authorization side: the sink receives a token to present at the source.
    Token {
        snapshot: ConsentSnapshot,
        token: String,
        service_pseudonym: Pseudonym,
        /// Base URL of the source the token is valid at.
        source_endpoint: String,
    },
    AccountErased {
        service_pseudonym: Pseudonym,
        consent_ids: Vec<ConsentId>,
    },
    OperatorMigrated {
        old_operator_id: OperatorId,
        new_operator_id: OperatorId,
        old_pseudonym: Pseudonym,
        new_pseudonym: Pseudonym,
        consent_map: BTreeMap<ConsentId, ConsentId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationEvent {
    pub event_id: EventId,
    pub operator_id: OperatorId,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_id: Option<ConsentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    pub payload: EventPayload,
    pub issued_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureBytes>,
}

impl NotificationEvent {
    pub fn signed(mut self, keys: &KeyMaterial) -> Result<Self> {
        self.signature = None;
        let bytes = canonical_bytes(&self)?;
        self.signature = Some(keys.sign(&bytes));
        Ok(self)
    }

    pub fn verify(&self, key: &VerificationKey) -> Result<()> {
        let signature = self
            .signature
            .ok_or_else(|| Error::Forbidden("unsigned event".into()))?;
        let mut unsigned = self.clone();
        unsigned.signature = None;
        key.verify(&canonical_bytes(&unsigned)?, &signature)
            .map_err(|_| Error::Forbidden("event signature does not verify".into()))
    }
}
