//! Consent creation and the status state machine.
//!
//! ```text
//!   Active --Pause--> Paused --Resume--> Active
//!   Active|Paused --Revoke--> Revoked (terminal)
//! ```

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};

use super::{
    ConsentAction, ConsentRecord, ConsentStatus, LinkStatus, ResourceSet, ServiceDescriptor,
    ServiceLink,
};
use crate::error::{Error, Result};
use crate::ids::{AccountId, ConsentId};

/// One side of a consent: the account's link and the linked service.
#[derive(Debug, Clone, Copy)]
pub struct ConsentParty<'a> {
    pub link: &'a ServiceLink,
    pub service: &'a ServiceDescriptor,
}

#[derive(Debug, Clone)]
pub struct ConsentRequest {
    pub account_id: AccountId,
    pub resource_set: ResourceSet,
    pub purposes: BTreeSet<String>,
    pub expires_at: Option<DateTime<Utc>>,
}

pub fn create_consent(
    consent_id: ConsentId,
    request: ConsentRequest,
    source: ConsentParty<'_>,
    sink: ConsentParty<'_>,
    now: DateTime<Utc>,
) -> Result<ConsentRecord> {
    request.resource_set.validate()?;
    if request.purposes.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one purpose is required".into(),
        ));
    }
    if let Some(expires_at) = request.expires_at {
        if expires_at <= now {
            return Err(Error::InvalidArgument(
                "consent expiry is in the past".into(),
            ));
        }
    }
    for party in [source, sink] {
        if party.link.service_id != party.service.service_id {
            return Err(Error::InvalidArgument(format!(
                "link {} does not belong to service {}",
                party.link.link_id, party.service.service_id
            )));
        }
        if party.link.status != LinkStatus::Active {
            return Err(Error::LinkInactive(party.link.link_id.to_string()));
        }
        if party.link.account_id != request.account_id {
            return Err(Error::ConsentScope(format!(
                "link {} belongs to a different account",
                party.link.link_id
            )));
        }
    }
    if source.link.link_id == sink.link.link_id {
        return Err(Error::InvalidArgument("source and sink must differ".into()));
    }
    if !source.service.role.is_source() {
        return Err(Error::Role(format!(
            "{} is not a source",
            source.service.name
        )));
    }
    if !sink.service.role.is_sink() {
        return Err(Error::Role(format!("{} is not a sink", sink.service.name)));
    }
    if let Some(extra) = request
        .purposes
        .iter()
        .find(|p| !sink.service.declared_purposes.contains(*p))
    {
        return Err(Error::ConsentScope(format!(
            "purpose {extra:?} is not declared by {}",
            sink.service.name
        )));
    }
    if let Some(extra) = request
        .resource_set
        .resource_types
        .iter()
        .find(|r| !source.service.provided_resources.contains(*r))
    {
        return Err(Error::ConsentScope(format!(
            "resource type {extra:?} is not provided by {}",
            source.service.name
        )));
    }

    Ok(ConsentRecord {
        consent_id,
        account_id: request.account_id,
        source_link_id: source.link.link_id.clone(),
        sink_link_id: sink.link.link_id.clone(),
        resource_set: request.resource_set,
        purposes: request.purposes,
        status: ConsentStatus::Active,
        version: 1,
        expires_at: request.expires_at,
        created_at: now,
        updated_at: now,
    })
}

/// Target status for `(status, action)`, or `None` when the pair is not a transition.
pub fn next_status(status: ConsentStatus, action: ConsentAction) -> Option<ConsentStatus> {
    use ConsentAction::*;
    use ConsentStatus::*;
    match (status, action) {
        (Active, Pause) => Some(Paused),
        (Paused, Resume) => Some(Active),
        (Active | Paused, Revoke) => Some(Revoked),
        _ => None,
    }
}

pub fn transition_consent(
    record: &ConsentRecord,
    action: ConsentAction,
    now: DateTime<Utc>,
) -> Result<ConsentRecord> {
    let status = next_status(record.status, action).ok_or_else(|| {
        Error::InvalidTransition(format!("{:?} from {:?}", action, record.status))
    })?;
    let mut next = record.clone();
    next.status = status;
    next.version = record.version + 1;
    next.updated_at = now.max(record.updated_at);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::consent::KeyMaterial;
    use crate::consent::{ServiceRole, VerificationKey};
    use crate::ids::{LinkId, Pseudonym, ServiceId};

    fn t(h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, h, 0, 0).unwrap()
    }

    fn key() -> String {
        KeyMaterial::from_seed(1).verification_key().to_base64()
    }

    fn service(id: &str, role: ServiceRole, res: &[&str], purposes: &[&str]) -> ServiceDescriptor {
        ServiceDescriptor {
            service_id: ServiceId::from(id),
            name: id.to_uppercase(),
            role,
            provided_resources: res.iter().map(|s| s.to_string()).collect(),
            declared_purposes: purposes.iter().map(|s| s.to_string()).collect(),
            purpose_descriptions: Default::default(),
            callback_endpoint: format!("http://{id}.local"),
            verification_key: key(),
            registered_at: t(0),
        }
    }

    fn link(id: &str, account: &str, svc: &str) -> ServiceLink {
        ServiceLink {
            link_id: LinkId::from(id),
            account_id: AccountId::from(account),
            service_id: ServiceId::from(svc),
            pseudonym: Pseudonym::from("ps_x"),
            status: LinkStatus::Active,
            created_at: t(0),
        }
    }

    struct Fixture {
        w2e: ServiceDescriptor,
        phr: ServiceDescriptor,
        w2e_link: ServiceLink,
        phr_link: ServiceLink,
    }

    fn fixture() -> Fixture {
        Fixture {
            w2e: service("w2e", ServiceRole::Source, &["exercise", "sleep"], &[]),
            phr: service("phr", ServiceRole::Sink, &[], &["health-inference"]),
            w2e_link: link("l1", "alice", "w2e"),
            phr_link: link("l2", "alice", "phr"),
        }
    }

    fn request(res: &[&str], purposes: &[&str]) -> ConsentRequest {
        ConsentRequest {
            account_id: AccountId::from("alice"),
            resource_set: ResourceSet::new(res.iter().copied()),
            purposes: purposes.iter().map(|s| s.to_string()).collect(),
            expires_at: None,
        }
    }

    fn create(f: &Fixture, req: ConsentRequest) -> Result<ConsentRecord> {
        create_consent(
            ConsentId::from("c1"),
            req,
            ConsentParty {
                link: &f.w2e_link,
                service: &f.w2e,
            },
            ConsentParty {
                link: &f.phr_link,
                service: &f.phr,
            },
            t(1),
        )
    }

    #[test]
    fn valid_consent() {
        let f = fixture();
        let rec = create(&f, request(&["exercise"], &["health-inference"])).unwrap();
        assert_eq!(rec.status, ConsentStatus::Active);
        assert_eq!(rec.version, 1);
        assert_eq!(rec.created_at, t(1));
    }

    #[test]
    fn undeclared_purpose() {
        let f = fixture();
        let err = create(&f, request(&["exercise"], &["marketing"])).unwrap_err();
        assert_eq!(err.code(), "consent-scope-error");
    }

    #[test]
    fn unprovided_resource() {
        let f = fixture();
        let err = create(&f, request(&["blood_glucose"], &["health-inference"])).unwrap_err();
        assert_eq!(err.code(), "consent-scope-error");
    }

    #[test]
    fn inactive_link() {
        let mut f = fixture();
        f.phr_link.status = LinkStatus::Removed;
        let err = create(&f, request(&["exercise"], &["health-inference"])).unwrap_err();
        assert_eq!(err.code(), "link-inactive");
    }

    #[test]
    fn role_mismatch() {
        let f = fixture();
        let err = create_consent(
            ConsentId::from("c1"),
            request(&["exercise"], &["health-inference"]),
            ConsentParty {
                link: &f.phr_link,
                service: &f.phr,
            },
            ConsentParty {
                link: &f.w2e_link,
                service: &f.w2e,
            },
            t(1),
        )
        .unwrap_err();
        assert_eq!(err.code(), "role-error");
    }

    #[test]
    fn foreign_link() {
        let mut f = fixture();
        f.phr_link.account_id = AccountId::from("bob");
        let err = create(&f, request(&["exercise"], &["health-inference"])).unwrap_err();
        assert_eq!(err.code(), "consent-scope-error");
    }

    #[test]
    fn transitions() {
        let f = fixture();
        let rec = create(&f, request(&["exercise"], &["health-inference"])).unwrap();
        let paused = transition_consent(&rec, ConsentAction::Pause, t(2)).unwrap();
        assert_eq!((paused.status, paused.version), (ConsentStatus::Paused, 2));
        let revoked = transition_consent(&paused, ConsentAction::Revoke, t(3)).unwrap();
        assert_eq!(
            (revoked.status, revoked.version),
            (ConsentStatus::Revoked, 3)
        );
        let err = transition_consent(&revoked, ConsentAction::Resume, t(4)).unwrap_err();
        assert_eq!(err.code(), "invalid-transition");
    }

    #[test]
    fn verification_key_validated() {
        let mut d = service("w2e", ServiceRole::Source, &["exercise"], &[]);
        d.verification_key = "nope".into();
        assert!(d.validate().is_err());
        d.verification_key = key();
        d.validate().unwrap();
        let _ = VerificationKey::from_base64(&d.verification_key).unwrap();
    }
}
