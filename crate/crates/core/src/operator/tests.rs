use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};

use super::*;
use crate::clock::ManualClock;
use crate::consent::verify_token;
use crate::fixtures::{self, run_fig5_on, DEMO_CREDENTIAL};
use crate::ids::SeededIds;

struct Harness {
    op: Operator,
    clock: Arc<ManualClock>,
    service_keys: KeyMaterial,
}

fn harness_with(id: &str, seed: u64, store: Arc<dyn Store>) -> Harness {
    let clock = Arc::new(ManualClock::new(
        Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap(),
    ));
    let op = Operator::new(
        OperatorSettings::new(id),
        KeyMaterial::from_seed(seed),
        store,
        clock.clone(),
        Arc::new(SeededIds::new(seed)),
    );
    Harness {
        op,
        clock,
        service_keys: KeyMaterial::from_seed(seed + 1000),
    }
}

fn harness() -> Harness {
    harness_with("op-a", 1, Arc::new(MemoryStore::new()))
}

#[test]
fn register_lookup_and_duplicates() {
    let h = harness();
    let reg = fixtures::w2e_registration("http://w2e.test", &h.service_keys);
    let done = h.op.register_service(reg.clone()).unwrap();
    assert_eq!(done.entry.trust_status, TrustStatus::Trusted);
    let found =
        h.op.lookup_service(&done.entry.descriptor.service_id)
            .unwrap();
    assert_eq!(found.descriptor.role, ServiceRole::Source);
    assert!(matches!(
        h.op.register_service(reg),
        Err(Error::AlreadyRegistered(_))
    ));
    assert!(matches!(
        h.op.lookup_service(&ServiceId::from("svc-nope")),
        Err(Error::NotFound(_))
    ));

    h.op.set_trust_status(&done.entry.descriptor.service_id, TrustStatus::Suspended)
        .unwrap();
    let found =
        h.op.lookup_service(&done.entry.descriptor.service_id)
            .unwrap();
    assert_eq!(found.trust_status, TrustStatus::Suspended);
}

#[test]
fn sink_without_purposes_is_rejected() {
    let h = harness();
    let mut reg = fixtures::health_app_registration("http://app.test", &h.service_keys);
    reg.declared_purposes.clear();
    assert!(matches!(
        h.op.register_service(reg),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn service_secret_is_only_stored_hashed() {
    let h = harness();
    let done =
        h.op.register_service(fixtures::w2e_registration(
            "http://w2e.test",
            &h.service_keys,
        ))
        .unwrap();
    let id = done.entry.descriptor.service_id.clone();
    h.op.authenticate_service(&id, &done.service_secret)
        .unwrap();
    assert!(h.op.authenticate_service(&id, "wrong").is_err());
    let stored = h.op.store().view(|t| serde_json::to_string(t).unwrap());
    assert!(!stored.contains(&done.service_secret));
}

#[test]
fn accounts() {
    let h = harness();
    let a = h.op.create_account("alice", DEMO_CREDENTIAL).unwrap();
    let b = h.op.create_account("alice", DEMO_CREDENTIAL).unwrap();
    assert_ne!(a, b);
    assert!(matches!(
        h.op.create_account("alice", ""),
        Err(Error::InvalidArgument(_))
    ));
    h.op.authenticate_account(&a, DEMO_CREDENTIAL).unwrap();
    assert!(matches!(
        h.op.authenticate_account(&a, "nope-nope"),
        Err(Error::Forbidden(_))
    ));
    let stored = h.op.store().view(|t| serde_json::to_string(t).unwrap());
    assert!(!stored.contains(DEMO_CREDENTIAL));
}

#[test]
fn links_are_idempotent_and_respect_trust() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let links = h.op.list_links(&ids.account);
    assert_eq!(links.len(), 3);
    assert!(links.iter().all(|l| l.status == LinkStatus::Active));
    let again = h.op.link_service(&ids.account, &ids.w2e).unwrap();
    assert_eq!(again.link_id, ids.w2e_link);

    let other =
        h.op.register_service(fixtures::health_app_registration(
            "http://other.test",
            &h.service_keys,
        ))
        .unwrap();
    let other_id = other.entry.descriptor.service_id;
    h.op.set_trust_status(&other_id, TrustStatus::Suspended)
        .unwrap();
    assert!(matches!(
        h.op.link_service(&ids.account, &other_id),
        Err(Error::ServiceUntrusted(_))
    ));
    assert!(matches!(
        h.op.link_service(&ids.account, &ServiceId::from("svc-missing")),
        Err(Error::NotFound(_))
    ));
}

#[test]
fn grant_queues_snapshot_to_source_and_token_to_sink() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let pending = h.op.pending_deliveries();
    assert_eq!(pending.len(), 4);
    let first = &pending[0];
    assert_eq!(first.target, ids.w2e);
    assert!(matches!(first.event.payload, EventPayload::Consent { .. }));
    let second = &pending[1];
    assert_eq!(second.target, ids.reasoner);
    match &second.event.payload {
        EventPayload::Token {
            token,
            source_endpoint,
            ..
        } => {
            assert_eq!(source_endpoint, "http://w2e.test");
            let claims =
                verify_token(token.as_bytes(), &h.op.verification_key(), h.clock.now()).unwrap();
            assert_eq!(claims.consent_id, ids.inference_consent);
        }
        other => panic!("unexpected payload {other:?}"),
    }
    for d in &pending {
        d.event.verify(&h.op.verification_key()).unwrap();
    }
}

#[test]
fn grant_rejects_undeclared_purpose() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let err =
        h.op.grant_consent(
            &ids.account,
            GrantRequest {
                source_link_id: ids.w2e_link.clone(),
                sink_link_id: ids.reasoner_link.clone(),
                resource_set: ResourceSet::new(["exercise"]),
                purposes: ["marketing".to_string()].into(),
                expires_at: None,
            },
        )
        .unwrap_err();
    assert!(matches!(err, Error::ConsentScope(_)));
}

#[test]
fn status_changes_notify_both_parties() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    h.op.dispatch_with(&mut |_| Ok(()));

    let paused =
        h.op.set_consent_status(&ids.account, &ids.inference_consent, ConsentAction::Pause)
            .unwrap();
    assert_eq!(paused.version, 2);
    let resumed =
        h.op.set_consent_status(&ids.account, &ids.inference_consent, ConsentAction::Resume)
            .unwrap();
    assert_eq!(
        (resumed.status, resumed.version),
        (ConsentStatus::Active, 3)
    );
    let revoked =
        h.op.set_consent_status(&ids.account, &ids.inference_consent, ConsentAction::Revoke)
            .unwrap();
    assert_eq!(revoked.status, ConsentStatus::Revoked);

    let pending = h.op.pending_deliveries();
    assert_eq!(pending.len(), 6);
    let versions: Vec<u64> = pending
        .iter()
        .filter(|d| d.target == ids.w2e)
        .map(|d| d.event.version.unwrap())
        .collect();
    assert_eq!(versions, vec![2, 3, 4]);
    // Only the resume carries a fresh token for the sink.
    let tokens = pending
        .iter()
        .filter(|d| matches!(d.event.payload, EventPayload::Token { .. }))
        .count();
    assert_eq!(tokens, 1);

    assert!(matches!(
        h.op.set_consent_status(&ids.account, &ids.inference_consent, ConsentAction::Resume),
        Err(Error::InvalidTransition(_))
    ));
    let stranger = h.op.create_account("mallory", DEMO_CREDENTIAL).unwrap();
    assert!(matches!(
        h.op.set_consent_status(&stranger, &ids.guidance_consent, ConsentAction::Revoke),
        Err(Error::NotOwner)
    ));
}

#[test]
fn introspection() {
    let h = harness();
    let w2e =
        h.op.register_service(fixtures::w2e_registration(
            "http://w2e.test",
            &h.service_keys,
        ))
        .unwrap();
    let reasoner =
        h.op.register_service(fixtures::reasoner_registration(
            "http://r.test",
            &h.service_keys,
        ))
        .unwrap();
    let outsider =
        h.op.register_service(fixtures::health_app_registration(
            "http://x.test",
            &h.service_keys,
        ))
        .unwrap();
    let account = h.op.create_account("alice", DEMO_CREDENTIAL).unwrap();
    let l1 =
        h.op.link_service(&account, &w2e.entry.descriptor.service_id)
            .unwrap();
    let l2 =
        h.op.link_service(&account, &reasoner.entry.descriptor.service_id)
            .unwrap();
    let grant =
        h.op.grant_consent(
            &account,
            GrantRequest {
                source_link_id: l1.link_id,
                sink_link_id: l2.link_id,
                resource_set: ResourceSet::new(["exercise"]),
                purposes: ["health-inference".to_string()].into(),
                expires_at: None,
            },
        )
        .unwrap();
    let by_id = IntrospectRequest {
        consent_id: Some(grant.record.consent_id.clone()),
        token: None,
    };
    let w2e_id = &w2e.entry.descriptor.service_id;
    let live =
        h.op.introspect(w2e_id, &w2e.service_secret, &by_id)
            .unwrap();
    assert_eq!((live.status, live.version), (ConsentStatus::Active, 1));
    assert_eq!(live.cache_ttl_secs, 30);

    let by_token = IntrospectRequest {
        consent_id: None,
        token: Some(grant.token.clone()),
    };
    assert_eq!(
        h.op.introspect(w2e_id, &w2e.service_secret, &by_token)
            .unwrap()
            .consent_id,
        grant.record.consent_id
    );

    h.op.set_consent_status(&account, &grant.record.consent_id, ConsentAction::Revoke)
        .unwrap();
    let live =
        h.op.introspect(w2e_id, &w2e.service_secret, &by_id)
            .unwrap();
    assert_eq!((live.status, live.version), (ConsentStatus::Revoked, 2));

    let err =
        h.op.introspect(
            &outsider.entry.descriptor.service_id,
            &outsider.service_secret,
            &by_id,
        )
        .unwrap_err();
    assert!(matches!(err, Error::Forbidden(_)));
    let missing = IntrospectRequest {
        consent_id: Some(ConsentId::from("cns-missing")),
        token: None,
    };
    assert!(matches!(
        h.op.introspect(w2e_id, &w2e.service_secret, &missing),
        Err(Error::NotFound(_))
    ));
    assert!(matches!(
        h.op.introspect(w2e_id, "bad", &by_id),
        Err(Error::Forbidden(_))
    ));
}

#[test]
fn list_consents_orders_by_update_and_keeps_revoked() {
    let h = harness();
    let fresh = h.op.create_account("bob", DEMO_CREDENTIAL).unwrap();
    assert!(h.op.list_consents(&fresh).unwrap().is_empty());

    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let views = h.op.list_consents(&ids.account).unwrap();
    assert_eq!(views.len(), 2);

    h.clock.advance(Duration::seconds(5));
    h.op.set_consent_status(&ids.account, &ids.inference_consent, ConsentAction::Revoke)
        .unwrap();
    let views = h.op.list_consents(&ids.account).unwrap();
    assert_eq!(views[0].record.consent_id, ids.inference_consent);
    assert_eq!(views[0].record.status, ConsentStatus::Revoked);
    assert_eq!(views[0].source.name, fixtures::W2E_NAME);
    assert!(views.iter().all(|v| v.receipt_id.is_some()));
}

#[test]
fn receipts_are_owner_only() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let receipt = h.op.receipt(&ids.account, &ids.guidance_consent).unwrap();
    crate::consent::verify_receipt(&receipt, &h.op.verification_key()).unwrap();
    let other = h.op.create_account("eve", DEMO_CREDENTIAL).unwrap();
    assert!(matches!(
        h.op.receipt(&other, &ids.guidance_consent),
        Err(Error::NotOwner)
    ));
}

#[test]
fn export_is_signed_and_free_of_secrets() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let doc = h.op.export_account(&ids.account).unwrap();
    assert_eq!((doc.links.len(), doc.consents.len()), (3, 2));
    doc.verify(&h.op.verification_key()).unwrap();
    let text = serde_json::to_string(&doc).unwrap();
    let secret_hex = hex::encode(h.op.keys().derivation_secret());
    assert!(!text.contains(&secret_hex));
    assert!(!text.contains("payload"));

    let mut tampered = doc.clone();
    tampered.consents[0]
        .record
        .purposes
        .insert("research".into());
    assert!(matches!(
        tampered.verify(&h.op.verification_key()),
        Err(Error::InvalidDocument(_))
    ));
}

fn semantic(
    op: &Operator,
    account: &AccountId,
) -> Vec<(String, String, Vec<String>, Vec<String>, ConsentStatus)> {
    let mut out: Vec<_> = op
        .list_consents(account)
        .unwrap()
        .into_iter()
        .map(|v| {
            (
                v.source.name,
                v.sink.name,
                v.record.resource_set.resource_types.into_iter().collect(),
                v.record.purposes.into_iter().collect(),
                v.record.status,
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn portability_round_trip() {
    let a = harness_with("op-a", 1, Arc::new(MemoryStore::new()));
    let mut b = harness_with("op-b", 2, Arc::new(MemoryStore::new()));
    let ids = run_fig5_on(&a.op, &a.service_keys).unwrap();
    a.op.set_consent_status(&ids.account, &ids.guidance_consent, ConsentAction::Pause)
        .unwrap();
    let doc = a.op.export_account(&ids.account).unwrap();

    // Same services registered at B under the same names and endpoints.
    b.op.register_service(fixtures::w2e_registration(
        "http://w2e.test",
        &a.service_keys,
    ))
    .unwrap();
    b.op.register_service(fixtures::reasoner_registration(
        "http://reasoner.test",
        &a.service_keys,
    ))
    .unwrap();
    b.op.register_service(fixtures::health_app_registration(
        "http://health-app.test",
        &a.service_keys,
    ))
    .unwrap();

    assert!(matches!(
        b.op.import_account(&doc, DEMO_CREDENTIAL),
        Err(Error::UntrustedOperator(_))
    ));
    b.op.settings
        .trusted_peers
        .insert(a.op.operator_id().clone(), a.op.verification_key());

    let mut tampered = doc.clone();
    tampered.account.display_name = "mallory".into();
    assert!(matches!(
        b.op.import_account(&tampered, DEMO_CREDENTIAL),
        Err(Error::InvalidDocument(_))
    ));

    let result = b.op.import_account(&doc, DEMO_CREDENTIAL).unwrap();
    assert_eq!(result.consent_map.len(), 2);
    assert!(result.consent_map.iter().all(|(old, new)| old != new));
    assert_eq!(
        semantic(&a.op, &ids.account),
        semantic(&b.op, &result.account_id)
    );

    let old_ps: Vec<_> = doc.links.iter().map(|l| l.pseudonym.clone()).collect();
    assert!(b
        .op
        .list_links(&result.account_id)
        .iter()
        .all(|l| !old_ps.contains(&l.pseudonym)));

    let pending = b.op.pending_deliveries();
    let migrated = pending
        .iter()
        .filter(|d| d.event.kind == EventKind::OperatorMigrated)
        .count();
    assert_eq!(migrated, 3);
    assert_eq!(pending[0].event.kind, EventKind::OperatorMigrated);
    // Only the active consent is re-announced with a token.
    let tokens = pending
        .iter()
        .filter(|d| matches!(d.event.payload, EventPayload::Token { .. }))
        .count();
    assert_eq!(tokens, 1);
}

#[test]
fn delete_account_revokes_notifies_and_purges() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    h.op.dispatch_with(&mut |_| Ok(()));
    let mut report = h.op.delete_account(&ids.account).unwrap();
    assert_eq!(report.revoked_consents.len(), 2);
    assert_eq!(report.notifications.len(), 3);
    assert_eq!(report.purged.consents, 2);
    assert_eq!(report.undelivered().count(), 3);

    let leftover = h.op.store().view(|t| serde_json::to_string(t).unwrap());
    let rows =
        h.op.store()
            .view(|t| t.accounts.len() + t.links.len() + t.consents.len() + t.receipts.len());
    assert_eq!(rows, 0);
    // The outbox still holds the notices; no table row references alice.
    assert!(leftover.contains("account_erased"));

    // Deliver everything except to the health app.
    let app = ids.health_app.clone();
    h.op.dispatch_with(&mut |d| {
        if d.target == app {
            Err(Error::RetryableIo("down".into()))
        } else {
            Ok(())
        }
    });
    h.op.refresh_erasure_report(&mut report);
    let undelivered: Vec<_> = report
        .undelivered()
        .map(|n| n.service_name.clone())
        .collect();
    assert_eq!(undelivered, vec![fixtures::HEALTH_APP_NAME.to_string()]);

    assert!(matches!(
        h.op.delete_account(&ids.account),
        Err(Error::NotFound(_))
    ));

    let fresh = h.op.create_account("bob", DEMO_CREDENTIAL).unwrap();
    let report = h.op.delete_account(&fresh).unwrap();
    assert!(report.notifications.is_empty() && report.revoked_consents.is_empty());
}

#[test]
fn dispatch_holds_back_later_events_for_a_failed_target() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    let w2e = ids.w2e.clone();
    let summary = h.op.dispatch_with(&mut |d| {
        if d.target == w2e {
            Err(Error::RetryableIo("x".into()))
        } else {
            Ok(())
        }
    });
    assert_eq!(
        summary,
        DispatchSummary {
            delivered: 3,
            failed: 1,
            deferred: 0
        }
    );
    h.op.set_consent_status(&ids.account, &ids.inference_consent, ConsentAction::Pause)
        .unwrap();
    let w2e = ids.w2e.clone();
    let summary = h.op.dispatch_with(&mut |d| {
        if d.target == w2e {
            Err(Error::RetryableIo("x".into()))
        } else {
            Ok(())
        }
    });
    assert_eq!(summary.deferred, 1);
    let mut seen = Vec::new();
    h.op.dispatch_with(&mut |d| {
        if d.target == ids.w2e {
            seen.push(d.event.version);
        }
        Ok(())
    });
    assert_eq!(seen, vec![Some(1), Some(2)]);
    assert!(h.op.pending_deliveries().is_empty());
}

#[test]
fn concurrent_transitions_have_no_version_gaps() {
    let h = harness();
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    h.op.dispatch_with(&mut |_| Ok(()));
    let op = Arc::new(h.op);
    let threads: Vec<_> = (0..8)
        .map(|i| {
            let op = op.clone();
            let ids = ids.clone();
            std::thread::spawn(move || {
                let mut applied = Vec::new();
                for j in 0..12 {
                    let action = if (i + j) % 2 == 0 {
                        ConsentAction::Pause
                    } else {
                        ConsentAction::Resume
                    };
                    if let Ok(r) =
                        op.set_consent_status(&ids.account, &ids.inference_consent, action)
                    {
                        applied.push(r.version);
                    }
                }
                applied
            })
        })
        .collect();
    let mut versions: Vec<u64> = threads
        .into_iter()
        .flat_map(|t| t.join().unwrap())
        .collect();
    versions.sort();
    let expected: Vec<u64> = (2..2 + versions.len() as u64).collect();
    assert_eq!(versions, expected);
}

#[test]
fn file_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.json");
    let h = harness_with("op-a", 1, Arc::new(FileStore::open(&path).unwrap()));
    let ids = run_fig5_on(&h.op, &h.service_keys).unwrap();
    drop(h);
    let h = harness_with("op-a", 1, Arc::new(FileStore::open(&path).unwrap()));
    assert_eq!(h.op.list_consents(&ids.account).unwrap().len(), 2);
}
