//! Operator-signed authorization tokens.
//!
//! Wire form: `base64url(canonical claims JSON) "." base64url(ed25519 signature)`,
//! both unpadded. Verification insists that the decoded claims are already in
//! canonical form, so there is exactly one accepted encoding per token.

use std::collections::BTreeSet;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::canonical::canonical_bytes;
use super::keys::{KeyMaterial, SignatureBytes, VerificationKey};
use super::{ConsentRecord, ConsentStatus, TimeRange};
use crate::error::{Error, Result};
use crate::ids::{ConsentId, OperatorId, Pseudonym, ServiceId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenClaims {
    pub consent_id: ConsentId,
    pub source_id: ServiceId,
    pub sink_id: ServiceId,
    /// The account's pseudonym at the source.
    pub pseudonym: Pseudonym,
    pub resource_types: BTreeSet<String>,
    pub purposes: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
    pub consent_version: u64,
    pub operator_id: OperatorId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationToken {
    pub claims: TokenClaims,
    pub signature: SignatureBytes,
}

/// Fields of a token that are not on the consent record itself.
#[derive(Debug, Clone)]
pub struct TokenContext {
    pub source_id: ServiceId,
    pub sink_id: ServiceId,
    pub source_pseudonym: Pseudonym,
    pub operator_id: OperatorId,
}

pub fn issue_token(
    record: &ConsentRecord,
    context: &TokenContext,
    keys: &KeyMaterial,
    now: DateTime<Utc>,
    ttl: Duration,
) -> Result<AuthorizationToken> {
    if ttl <= Duration::zero() {
        return Err(Error::InvalidArgument("token ttl must be positive".into()));
    }
    if record.status != ConsentStatus::Active {
        return Err(Error::ConsentInactive);
    }
    let mut expires_at = now + ttl;
    if let Some(limit) = record.expires_at {
        if limit <= now {
            return Err(Error::ConsentInactive);
        }
        expires_at = expires_at.min(limit);
    }
    let claims = TokenClaims {
        consent_id: record.consent_id.clone(),
        source_id: context.source_id.clone(),
        sink_id: context.sink_id.clone(),
        pseudonym: context.source_pseudonym.clone(),
        resource_types: record.resource_set.resource_types.clone(),
        purposes: record.purposes.clone(),
        time_range: record.resource_set.time_range,
        consent_version: record.version,
        operator_id: context.operator_id.clone(),
        issued_at: now,
        expires_at,
    };
    let signature = keys.sign(&canonical_bytes(&claims)?);
    Ok(AuthorizationToken { claims, signature })
}

impl AuthorizationToken {
    pub fn encode(&self) -> String {
        let claims = canonical_bytes(&self.claims).expect("claims always serialize");
        format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(claims),
            self.signature.to_base64()
        )
    }
}

/// Splits and decodes a token without checking its signature. Used to pick the
/// right operator key before calling [`verify_token`].
pub fn decode_unverified(token: &[u8]) -> Result<(TokenClaims, Vec<u8>, SignatureBytes)> {
    let text = std::str::from_utf8(token)
        .map_err(|_| Error::TokenMalformed("token is not UTF-8".into()))?;
    let (claims_part, sig_part) = text
        .split_once('.')
        .ok_or_else(|| Error::TokenMalformed("missing separator".into()))?;
    if sig_part.contains('.') {
        return Err(Error::TokenMalformed("too many segments".into()));
    }
    let claims_bytes = URL_SAFE_NO_PAD
        .decode(claims_part)
        .map_err(|e| Error::TokenMalformed(format!("claims encoding: {e}")))?;
    let signature = SignatureBytes::from_base64(sig_part)?;
    let claims: TokenClaims = serde_json::from_slice(&claims_bytes)
        .map_err(|e| Error::TokenMalformed(format!("claims: {e}")))?;
    if canonical_bytes(&claims)? != claims_bytes {
        return Err(Error::TokenMalformed("claims are not canonical".into()));
    }
    Ok((claims, claims_bytes, signature))
}

pub fn verify_token(
    token: &[u8],
    key: &VerificationKey,
    now: DateTime<Utc>,
) -> Result<TokenClaims> {
    let (claims, claims_bytes, signature) = decode_unverified(token)?;
    key.verify(&claims_bytes, &signature)
        .map_err(|_| Error::TokenInvalid)?;
    if claims.expires_at <= claims.issued_at {
        return Err(Error::TokenInvalid);
    }
    if now >= claims.expires_at {
        return Err(Error::TokenExpired);
    }
    Ok(claims)
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::consent::ResourceSet;
    use crate::ids::{AccountId, LinkId};

    fn t(s: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap() + Duration::seconds(s)
    }

    fn record(status: ConsentStatus) -> ConsentRecord {
        ConsentRecord {
            consent_id: ConsentId::from("c1"),
            account_id: AccountId::from("alice"),
            source_link_id: LinkId::from("l1"),
            sink_link_id: LinkId::from("l2"),
            resource_set: ResourceSet::new(["exercise"]),
            purposes: ["health-inference".to_string()].into(),
            status,
            version: 4,
            expires_at: None,
            created_at: t(0),
            updated_at: t(0),
        }
    }

    fn ctx() -> TokenContext {
        TokenContext {
            source_id: ServiceId::from("w2e"),
            sink_id: ServiceId::from("reasoner"),
            source_pseudonym: Pseudonym::from("ps_abc"),
            operator_id: OperatorId::from("op-a"),
        }
    }

    #[test]
    fn round_trip() {
        let keys = KeyMaterial::from_seed(1);
        let tok = issue_token(
            &record(ConsentStatus::Active),
            &ctx(),
            &keys,
            t(0),
            Duration::seconds(60),
        )
        .unwrap();
        let claims = verify_token(tok.encode().as_bytes(), &keys.verification_key(), t(1)).unwrap();
        assert_eq!(claims, tok.claims);
        assert_eq!(claims.consent_version, 4);
        assert_eq!(claims.pseudonym, Pseudonym::from("ps_abc"));
    }

    #[test]
    fn inactive_record() {
        let keys = KeyMaterial::from_seed(1);
        for status in [ConsentStatus::Paused, ConsentStatus::Revoked] {
            let err = issue_token(&record(status), &ctx(), &keys, t(0), Duration::seconds(60))
                .unwrap_err();
            assert_eq!(err.code(), "consent-inactive");
        }
    }

    #[test]
    fn non_positive_ttl() {
        let keys = KeyMaterial::from_seed(1);
        let err = issue_token(
            &record(ConsentStatus::Active),
            &ctx(),
            &keys,
            t(0),
            Duration::zero(),
        )
        .unwrap_err();
        assert_eq!(err.code(), "invalid-argument");
    }

    #[test]
    fn expiry_boundary_is_strict() {
        let keys = KeyMaterial::from_seed(1);
        let tok = issue_token(
            &record(ConsentStatus::Active),
            &ctx(),
            &keys,
            t(0),
            Duration::seconds(60),
        )
        .unwrap();
        let bytes = tok.encode();
        assert!(verify_token(bytes.as_bytes(), &keys.verification_key(), t(59)).is_ok());
        let err = verify_token(bytes.as_bytes(), &keys.verification_key(), t(60)).unwrap_err();
        assert_eq!(err.code(), "token-expired");
    }

    #[test]
    fn expiry_clamped_to_consent() {
        let keys = KeyMaterial::from_seed(1);
        let mut rec = record(ConsentStatus::Active);
        rec.expires_at = Some(t(30));
        let tok = issue_token(&rec, &ctx(), &keys, t(0), Duration::seconds(60)).unwrap();
        assert_eq!(tok.claims.expires_at, t(30));
    }

    #[test]
    fn wrong_key() {
        let keys = KeyMaterial::from_seed(1);
        let other = KeyMaterial::from_seed(2);
        let tok = issue_token(
            &record(ConsentStatus::Active),
            &ctx(),
            &keys,
            t(0),
            Duration::seconds(60),
        )
        .unwrap();
        let err =
            verify_token(tok.encode().as_bytes(), &other.verification_key(), t(1)).unwrap_err();
        assert_eq!(err.code(), "token-invalid");
    }

    #[test]
    fn malformed() {
        let keys = KeyMaterial::from_seed(1);
        for junk in ["", "abc", "a.b.c", "!!.??"] {
            let err = verify_token(junk.as_bytes(), &keys.verification_key(), t(1)).unwrap_err();
            assert_eq!(err.code(), "token-malformed", "{junk}");
        }
    }
}
