//! Message-shape model of the UMA core flow for the same scenario.
//!
//! Nothing here is a conformant UMA implementation. Each request and response
//! the flow requires is logged with a small synthetic body so that sizes are
//! comparable in order of magnitude.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde_json::json;

use super::kinds::*;
use super::scenario::{Scenario, Step};
use super::{Bus, Phase, Protocol, Transcript, AUTHORIZATION_SERVER as AS};
use crate::consent::{ConsentAction, ConsentStatus};
use crate::error::Result;
use crate::ids::{IdSource, SeededIds};

/// How long the resource server trusts one introspection answer.
pub const INTROSPECTION_CACHE_SECS: i64 = 30;

struct GrantState {
    status: ConsentStatus,
    rpt: Option<String>,
    introspected_at: Option<DateTime<Utc>>,
}

pub fn run_uma(scenario: &Scenario) -> Result<Transcript> {
    scenario.validate()?;
    let ids = SeededIds::new(scenario.seed);
    let shapes = scenario.grants();
    let mut now = scenario.start;
    let mut bus = Bus::new();
    let mut pats: BTreeMap<String, String> = BTreeMap::new();
    let mut resources: BTreeMap<String, String> = BTreeMap::new();
    let mut grants: BTreeMap<String, GrantState> = BTreeMap::new();
    let mut accessed: BTreeSet<String> = BTreeSet::new();
    let mut rpts_issued = 0usize;

    for step in &scenario.steps {
        match step {
            Step::Register { party } => {
                bus.phase = Phase::Registration;
                bus.send(
                    party,
                    AS,
                    CLIENT_REGISTRATION_REQUEST,
                    &json!({"client_name": party}),
                );
                bus.send(
                    AS,
                    party,
                    CLIENT_REGISTRATION_RESPONSE,
                    &json!({"client_id": ids.next_id("client")}),
                );
            }
            Step::CreateAccount { user } => {
                bus.phase = Phase::Registration;
                bus.send(user, AS, ACCOUNT_REQUEST, &json!({"display_name": user}));
                bus.send(
                    AS,
                    user,
                    ACCOUNT_RESPONSE,
                    &json!({"account_id": ids.next_id("acct")}),
                );
            }
            Step::Link { .. } | Step::Sync { .. } => {}
            Step::Grant {
                label,
                user,
                source,
                sink,
                resource_types,
                purposes,
            } => {
                bus.phase = Phase::Consent;
                if !pats.contains_key(source) {
                    // the owner introduces the resource server to the authorization server
                    bus.send(
                        user,
                        AS,
                        PAT_AUTHORIZE_REQUEST,
                        &json!({"client_id": source, "scope": "uma_protection"}),
                    );
                    let code = ids.next_id("code");
                    bus.send(AS, user, PAT_AUTHORIZE_RESPONSE, &json!({"code": code}));
                    bus.send(
                        source,
                        AS,
                        PAT_TOKEN_REQUEST,
                        &json!({"grant_type": "authorization_code", "code": code}),
                    );
                    let pat = ids.next_id("pat");
                    bus.send(
                        AS,
                        source,
                        PAT_TOKEN_RESPONSE,
                        &json!({"access_token": pat, "token_type": "Bearer"}),
                    );
                    pats.insert(source.clone(), pat);
                }
                bus.send(
                    source,
                    AS,
                    RESOURCE_REGISTRATION_REQUEST,
                    &json!({"resource_scopes": resource_types, "owner": user}),
                );
                let resource_id = ids.next_id("rsrc");
                bus.send(
                    AS,
                    source,
                    RESOURCE_REGISTRATION_RESPONSE,
                    &json!({"_id": resource_id}),
                );
                bus.send(
                    user,
                    AS,
                    POLICY_REQUEST,
                    &json!({"resource_id": resource_id, "requesting_party": sink, "purposes": purposes}),
                );
                bus.send(
                    AS,
                    user,
                    POLICY_RESPONSE,
                    &json!({"policy_id": ids.next_id("policy")}),
                );
                resources.insert(label.clone(), resource_id);
                grants.insert(
                    label.clone(),
                    GrantState {
                        status: ConsentStatus::Active,
                        rpt: None,
                        introspected_at: None,
                    },
                );
            }
            Step::SetStatus { grant, action } => {
                bus.phase = Phase::Consent;
                let user = &shapes[grant].user;
                bus.send(
                    user,
                    AS,
                    POLICY_REQUEST,
                    &json!({"resource_id": resources[grant], "action": action}),
                );
                bus.send(
                    AS,
                    user,
                    POLICY_RESPONSE,
                    &json!({"resource_id": resources[grant]}),
                );
                let g = grants.get_mut(grant).expect("validated");
                g.status = match (g.status, action) {
                    (ConsentStatus::Revoked, _) => ConsentStatus::Revoked,
                    (_, ConsentAction::Revoke) => ConsentStatus::Revoked,
                    (_, ConsentAction::Pause) => ConsentStatus::Paused,
                    (_, ConsentAction::Resume) => ConsentStatus::Active,
                };
            }
            Step::AdvanceClock { seconds } => now += Duration::seconds(*seconds),
            Step::Fetch {
                grant,
                resource_types,
                ..
            } => {
                let shape = &shapes[grant];
                let types = if resource_types.is_empty() {
                    &shape.resource_types
                } else {
                    resource_types
                };
                let (client, rs) = (shape.sink.as_str(), shape.source.as_str());
                for rt in types {
                    bus.phase = if accessed.insert(grant.clone()) {
                        Phase::FirstAccess
                    } else {
                        Phase::SteadyState
                    };
                    let g = grants.get_mut(grant).expect("validated");
                    if g.rpt.is_none() {
                        bus.send(client, rs, TOKENLESS_ATTEMPT, &json!({"resource_type": rt}));
                        bus.send(
                            rs,
                            AS,
                            PERMISSION_REQUEST,
                            &json!({"resource_id": resources[grant], "resource_scopes": [rt]}),
                        );
                        let ticket = ids.next_id("ticket");
                        bus.send(AS, rs, PERMISSION_RESPONSE, &json!({"ticket": ticket}));
                        bus.send(rs, client, TICKET, &json!({"ticket": ticket, "as_uri": AS}));
                        bus.send(client, AS, RPT_REQUEST, &json!({"grant_type": "urn:ietf:params:oauth:grant-type:uma-ticket", "ticket": ticket}));
                        if g.status != ConsentStatus::Active {
                            bus.send(
                                AS,
                                client,
                                ERROR_RESPONSE,
                                &json!({"error": "request_denied"}),
                            );
                            continue;
                        }
                        let rpt = ids.next_id("rpt");
                        rpts_issued += 1;
                        bus.send(
                            AS,
                            client,
                            RPT_RESPONSE,
                            &json!({"access_token": rpt, "token_type": "Bearer"}),
                        );
                        bus.send(
                            client,
                            rs,
                            RETRY_WITH_RPT,
                            &json!({"resource_type": rt, "authorization": format!("Bearer {rpt}")}),
                        );
                        g.rpt = Some(rpt);
                    } else {
                        let rpt = g.rpt.clone().unwrap_or_default();
                        bus.send(
                            client,
                            rs,
                            DATA_REQUEST,
                            &json!({"resource_type": rt, "authorization": format!("Bearer {rpt}")}),
                        );
                    }
                    let fresh = g
                        .introspected_at
                        .is_some_and(|at| now - at < Duration::seconds(INTROSPECTION_CACHE_SECS));
                    if !fresh {
                        bus.send(rs, AS, INTROSPECT_REQUEST, &json!({"token": g.rpt}));
                        bus.send(
                            AS,
                            rs,
                            INTROSPECT_RESPONSE,
                            &json!({"active": g.status == ConsentStatus::Active, "scopes": [rt]}),
                        );
                        g.introspected_at = Some(now);
                    }
                    if g.status == ConsentStatus::Active {
                        bus.send(rs, client, DATA_RESPONSE, &json!({"resource_type": rt}));
                    } else {
                        bus.send(
                            rs,
                            client,
                            ERROR_RESPONSE,
                            &json!({"error": "insufficient_scope"}),
                        );
                    }
                }
            }
        }
    }
    let mut final_state = BTreeMap::new();
    final_state.insert(
        AS.to_string(),
        json!({
            "pats": pats.len(),
            "resources": resources.len(),
            "rpts_issued": rpts_issued,
        }),
    );
    Ok(Transcript {
        scenario: scenario.name.clone(),
        protocol: Protocol::Uma,
        messages: bus.into_messages(),
        final_state,
    })
}
