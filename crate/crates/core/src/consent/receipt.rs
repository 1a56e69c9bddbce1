//! Consent receipts: a signed, human-readable account of one grant event.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::canonical::canonical_bytes;
use super::keys::{KeyMaterial, SignatureBytes, VerificationKey};
use super::{ConsentRecord, ConsentStatus};
use crate::error::{Error, Result};
use crate::ids::{ConsentId, OperatorId, Pseudonym, ReceiptId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PurposeStatement {
    pub purpose: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsentReceipt {
    pub receipt_id: ReceiptId,
    pub consent_id: ConsentId,
    pub timestamp: DateTime<Utc>,
    pub subject_pseudonym: Pseudonym,
    pub data_source_name: String,
    /// The controller that receives the data.
    pub data_sink_name: String,
    pub resource_types: Vec<String>,
    pub purposes: Vec<PurposeStatement>,
    pub jurisdiction: String,
    pub operator_id: OperatorId,
    pub collection_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<SignatureBytes>,
}

impl ConsentReceipt {
    /// Canonical bytes of everything except the signature.
    pub fn signing_bytes(&self) -> Result<Vec<u8>> {
        let mut unsigned = self.clone();
        unsigned.signature = None;
        canonical_bytes(&unsigned)
    }
}

/// Names and descriptions that go on a receipt but are not part of the record.
#[derive(Debug, Clone)]
pub struct ReceiptContext {
    pub receipt_id: ReceiptId,
    pub subject_pseudonym: Pseudonym,
    pub source_name: String,
    pub sink_name: String,
    pub purpose_descriptions: BTreeMap<String, String>,
    pub jurisdiction: String,
    pub collection_method: String,
    pub operator_id: OperatorId,
}

pub fn build_receipt(
    record: &ConsentRecord,
    context: &ReceiptContext,
    now: DateTime<Utc>,
    keys: &KeyMaterial,
) -> Result<ConsentReceipt> {
    if record.status != ConsentStatus::Active {
        return Err(Error::ConsentInactive);
    }
    let purposes = record
        .purposes
        .iter()
        .map(|purpose| {
            context
                .purpose_descriptions
                .get(purpose)
                .filter(|d| !d.trim().is_empty())
                .map(|description| PurposeStatement {
                    purpose: purpose.clone(),
                    description: description.clone(),
                })
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("purpose {purpose:?} has no description"))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let text_fields = [
        ("receipt_id", context.receipt_id.as_str()),
        ("subject_pseudonym", context.subject_pseudonym.as_str()),
        ("data_source_name", context.source_name.as_str()),
        ("data_sink_name", context.sink_name.as_str()),
        ("jurisdiction", context.jurisdiction.as_str()),
        ("collection_method", context.collection_method.as_str()),
        ("operator_id", context.operator_id.as_str()),
    ];
    if let Some((name, _)) = text_fields.iter().find(|(_, v)| v.trim().is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "receipt field {name} is empty"
        )));
    }
    let mut receipt = ConsentReceipt {
        receipt_id: context.receipt_id.clone(),
        consent_id: record.consent_id.clone(),
        timestamp: now,
        subject_pseudonym: context.subject_pseudonym.clone(),
        data_source_name: context.source_name.clone(),
        data_sink_name: context.sink_name.clone(),
        resource_types: record.resource_set.resource_types.iter().cloned().collect(),
        purposes,
        jurisdiction: context.jurisdiction.clone(),
        operator_id: context.operator_id.clone(),
        collection_method: context.collection_method.clone(),
        signature: None,
    };
    receipt.signature = Some(keys.sign(&receipt.signing_bytes()?));
    Ok(receipt)
}

pub fn verify_receipt(receipt: &ConsentReceipt, key: &VerificationKey) -> Result<()> {
    let signature = receipt.signature.as_ref().ok_or(Error::TokenInvalid)?;
    key.verify(&receipt.signing_bytes()?, signature)
}
