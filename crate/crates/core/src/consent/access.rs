use serde::{Deserialize, Serialize};

use super::token::TokenClaims;
use super::{ConsentStatus, TimeRange};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    OutOfScope,
    ConsentInactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum AccessDecision {
    Allow,
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn into_result(self) -> Result<(), Error> {
        match self {
            AccessDecision::Allow => Ok(()),
            AccessDecision::Deny(DenyReason::OutOfScope) => Err(Error::OutOfScope),
            AccessDecision::Deny(DenyReason::ConsentInactive) => Err(Error::ConsentInactive),
        }
    }
}

/// Decides a data request against already-verified claims and the consent's
/// live status. A liveness failure wins over a scope failure.
pub fn check_access(
    claims: &TokenClaims,
    resource_type: &str,
    requested_range: Option<&TimeRange>,
    live_status: ConsentStatus,
) -> AccessDecision {
    if live_status != ConsentStatus::Active {
        return AccessDecision::Deny(DenyReason::ConsentInactive);
    }
    if !claims.resource_types.contains(resource_type) {
        return AccessDecision::Deny(DenyReason::OutOfScope);
    }
    if let Some(allowed) = &claims.time_range {
        match requested_range {
            Some(requested) if allowed.covers(requested) => {}
            _ => return AccessDecision::Deny(DenyReason::OutOfScope),
        }
    }
    AccessDecision::Allow
}
