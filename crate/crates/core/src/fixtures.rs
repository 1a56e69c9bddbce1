//! The three reference services of the health recommendation scenario and the
//! bundled vendor data. Shared by the demo, the simulator and tests.

use std::collections::BTreeSet;

use chrono::{DateTime, TimeZone, Utc};

use crate::consent::{ConsentReceipt, KeyMaterial, ResourceSet, ServiceRole};
use crate::datakit::proxy::VendorFixture;
use crate::datakit::ResourceType;
use crate::error::Result;
use crate::ids::{AccountId, ConsentId, LinkId, ServiceId};
use crate::operator::{GrantRequest, Operator, ServiceRegistration};

pub const W2E_NAME: &str = "W2E";
pub const REASONER_NAME: &str = "Semantic Reasoner";
pub const HEALTH_APP_NAME: &str = "Health App";

pub const HEALTH_INFERENCE: &str = "health-inference";
pub const GUIDANCE: &str = "guidance";
pub const RECOMMENDATIONS: &str = "recommendations";
pub const FACTS: &str = "facts";

/// Start of the week covered by the bundled vendor data.
pub fn demo_window_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, 0, 0, 0).unwrap()
}

pub fn demo_window_end() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 11, 0, 0, 0).unwrap()
}

/// Vendor user key under which the demo subject appears in every fixture.
pub const DEMO_VENDOR_USER: &str = "alice";

pub fn all_resource_types() -> BTreeSet<String> {
    ResourceType::ALL
        .iter()
        .map(|r| r.as_str().to_string())
        .collect()
}

pub fn w2e_registration(endpoint: &str, keys: &KeyMaterial) -> ServiceRegistration {
    ServiceRegistration {
        name: W2E_NAME.into(),
        role: ServiceRole::Source,
        provided_resources: all_resource_types(),
        declared_purposes: BTreeSet::new(),
        purpose_descriptions: Default::default(),
        callback_endpoint: endpoint.into(),
        verification_key: keys.verification_key().to_base64(),
    }
}

pub fn reasoner_registration(endpoint: &str, keys: &KeyMaterial) -> ServiceRegistration {
    ServiceRegistration {
        name: REASONER_NAME.into(),
        role: ServiceRole::Both,
        provided_resources: [RECOMMENDATIONS, FACTS]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        declared_purposes: [HEALTH_INFERENCE.to_string()].into(),
        purpose_descriptions: Default::default(),
        callback_endpoint: endpoint.into(),
        verification_key: keys.verification_key().to_base64(),
    }
}

pub fn health_app_registration(endpoint: &str, keys: &KeyMaterial) -> ServiceRegistration {
    ServiceRegistration {
        name: HEALTH_APP_NAME.into(),
        role: ServiceRole::Sink,
        provided_resources: BTreeSet::new(),
        declared_purposes: [GUIDANCE.to_string()].into(),
        purpose_descriptions: Default::default(),
        callback_endpoint: endpoint.into(),
        verification_key: keys.verification_key().to_base64(),
    }
}

pub fn vendor_fixtures() -> Vec<VendorFixture> {
    [
        include_str!("../fixtures/vendors/activity_tracker.json"),
        include_str!("../fixtures/vendors/sleep_tracker.json"),
        include_str!("../fixtures/vendors/grocery_loyalty.json"),
    ]
    .iter()
    .map(|text| serde_json::from_str(text).expect("bundled vendor fixture parses"))
    .collect()
}

/// Ids produced by running the account/link/grant steps against an operator.
#[derive(Debug, Clone)]
pub struct Fig5Ids {
    pub w2e: ServiceId,
    pub reasoner: ServiceId,
    pub health_app: ServiceId,
    pub account: AccountId,
    pub w2e_link: LinkId,
    pub reasoner_link: LinkId,
    pub health_app_link: LinkId,
    pub inference_consent: ConsentId,
    pub guidance_consent: ConsentId,
    pub receipts: Vec<ConsentReceipt>,
    pub tokens: Vec<String>,
    pub w2e_secret: String,
    pub reasoner_secret: String,
    pub health_app_secret: String,
}

pub const DEMO_CREDENTIAL: &str = "correct horse battery staple";

/// Registers the three services, creates the subject's account, links all
/// three services and grants both consents directly on `operator`.
pub fn run_fig5_on(operator: &Operator, service_keys: &KeyMaterial) -> Result<Fig5Ids> {
    let w2e = operator.register_service(w2e_registration("http://w2e.test", service_keys))?;
    let reasoner =
        operator.register_service(reasoner_registration("http://reasoner.test", service_keys))?;
    let app = operator.register_service(health_app_registration(
        "http://health-app.test",
        service_keys,
    ))?;
    let (w2e_secret, reasoner_secret, health_app_secret) = (
        w2e.service_secret.clone(),
        reasoner.service_secret.clone(),
        app.service_secret.clone(),
    );
    let w2e = w2e.entry.descriptor.service_id;
    let reasoner = reasoner.entry.descriptor.service_id;
    let health_app = app.entry.descriptor.service_id;

    let account = operator.create_account("alice", DEMO_CREDENTIAL)?;
    let w2e_link = operator.link_service(&account, &w2e)?.link_id;
    let reasoner_link = operator.link_service(&account, &reasoner)?.link_id;
    let health_app_link = operator.link_service(&account, &health_app)?.link_id;

    let inference = operator.grant_consent(
        &account,
        GrantRequest {
            source_link_id: w2e_link.clone(),
            sink_link_id: reasoner_link.clone(),
            resource_set: ResourceSet::new(all_resource_types()),
            purposes: [HEALTH_INFERENCE.to_string()].into(),
            expires_at: None,
        },
    )?;
    let guidance = operator.grant_consent(
        &account,
        GrantRequest {
            source_link_id: reasoner_link.clone(),
            sink_link_id: health_app_link.clone(),
            resource_set: ResourceSet::new([RECOMMENDATIONS]),
            purposes: [GUIDANCE.to_string()].into(),
            expires_at: None,
        },
    )?;
    Ok(Fig5Ids {
        w2e,
        reasoner,
        health_app,
        account,
        w2e_link,
        reasoner_link,
        health_app_link,
        inference_consent: inference.record.consent_id,
        guidance_consent: guidance.record.consent_id,
        receipts: vec![inference.receipt, guidance.receipt],
        tokens: vec![inference.token, guidance.token],
        w2e_secret,
        reasoner_secret,
        health_app_secret,
    })
}
