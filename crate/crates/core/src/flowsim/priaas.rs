//! The PRIAAS run: real operator, data services and reasoner, with the bus
//! standing in for HTTP.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::Duration;
use serde_json::{json, Value};

use super::kinds::*;
use super::scenario::{GrantShape, PartyKind, Scenario, Step};
use super::{Bus, Phase, Protocol, Transcript, OPERATOR};
use crate::clock::{Clock, ManualClock};
use crate::consent::{KeyMaterial, ResourceSet, ServiceRole, TimeRange, TokenClaims};
use crate::datakit::sink::range_query;
use crate::datakit::{
    proxy_sync, Authorization, DataPage, DataRequest, DataSink, DataSource, NoticeAck, Observation,
    OperatorKeys, SinkNotice,
};
use crate::error::{Error, Result};
use crate::fixtures::{self, DEMO_CREDENTIAL};
use crate::ids::{AccountId, ConsentId, SeededIds, ServiceId};
use crate::operator::{
    GrantRequest, IntrospectRequest, Introspection, MemoryStore, NotificationEvent, Operator,
    OperatorSettings, ServiceRegistration,
};
use crate::reasoner::service::{InferenceResponse, IngestBatch};
use crate::reasoner::ReasonerService;

enum Role {
    Source(DataSource),
    Reasoner(ReasonerService),
    App {
        sink: DataSink,
        received: Vec<InferenceResponse>,
    },
}

struct Service {
    id: ServiceId,
    secret: String,
    role: Role,
}

struct Run<'a> {
    scenario: &'a Scenario,
    shapes: BTreeMap<String, GrantShape>,
    clock: Arc<ManualClock>,
    op: Operator,
    keys: Arc<OperatorKeys>,
    ttl: Duration,
    bus: Bus,
    services: BTreeMap<String, Service>,
    accounts: BTreeMap<String, AccountId>,
    links: BTreeMap<(String, String), crate::consent::ServiceLink>,
    consents: BTreeMap<String, ConsentId>,
    accessed: BTreeSet<String>,
    outcomes: Vec<Value>,
}

pub fn run_priaas(scenario: &Scenario) -> Result<Transcript> {
    scenario.validate()?;
    let clock = Arc::new(ManualClock::new(scenario.start));
    let op = Operator::new(
        OperatorSettings::new(OPERATOR),
        KeyMaterial::from_seed(scenario.seed),
        Arc::new(MemoryStore::new()),
        clock.clone(),
        Arc::new(SeededIds::new(scenario.seed)),
    );
    let keys = Arc::new(OperatorKeys::new());
    keys.trust(op.operator_id().clone(), op.verification_key());
    let ttl = Duration::seconds(op.info().introspection_ttl_secs as i64);
    let mut run = Run {
        scenario,
        shapes: scenario.grants(),
        clock,
        op,
        keys,
        ttl,
        bus: Bus::new(),
        services: BTreeMap::new(),
        accounts: BTreeMap::new(),
        links: BTreeMap::new(),
        consents: BTreeMap::new(),
        accessed: BTreeSet::new(),
        outcomes: Vec::new(),
    };
    for (i, step) in scenario.steps.iter().enumerate() {
        run.step(i + 1, step)?;
    }
    let final_state = run.final_state()?;
    Ok(Transcript {
        scenario: scenario.name.clone(),
        protocol: Protocol::Priaas,
        messages: run.bus.into_messages(),
        final_state,
    })
}

fn error_body(e: &Error) -> Value {
    json!({"error_code": e.code(), "message": e.message()})
}

impl Run<'_> {
    fn step(&mut self, n: usize, step: &Step) -> Result<()> {
        match step {
            Step::Register { party } => self.register(party),
            Step::CreateAccount { user } => {
                self.bus.phase = Phase::Registration;
                self.bus.send(
                    user,
                    OPERATOR,
                    ACCOUNT_REQUEST,
                    &json!({"display_name": user}),
                );
                let account = self.op.create_account(user, DEMO_CREDENTIAL)?;
                self.bus.send(
                    OPERATOR,
                    user,
                    ACCOUNT_RESPONSE,
                    &json!({"account_id": account}),
                );
                self.accounts.insert(user.clone(), account);
                Ok(())
            }
            Step::Link { user, service } => {
                self.bus.phase = Phase::Registration;
                let account = self.accounts[user].clone();
                let service_id = self.services[service].id.clone();
                self.bus.send(
                    user,
                    OPERATOR,
                    LINK_REQUEST,
                    &json!({"account_id": account, "service_id": service_id}),
                );
                let link = self.op.link_service(&account, &service_id)?;
                self.bus.send(OPERATOR, user, LINK_RESPONSE, &link);
                self.links.insert((user.clone(), service.clone()), link);
                Ok(())
            }
            Step::Sync { source, user } => {
                let party = self.scenario.party(user).expect("validated");
                let vendor_user = party.vendor_user.clone().unwrap_or_else(|| user.clone());
                let pseudonym = self.links[&(user.clone(), source.clone())]
                    .pseudonym
                    .clone();
                let Role::Source(ds) = &self.services[source].role else {
                    unreachable!("validated")
                };
                proxy_sync(
                    &ds.store,
                    &fixtures::vendor_fixtures(),
                    &[(vendor_user, pseudonym)].into(),
                );
                Ok(())
            }
            Step::Grant {
                label,
                user,
                source,
                sink,
                resource_types,
                purposes,
            } => {
                self.bus.phase = Phase::Consent;
                let request = GrantRequest {
                    source_link_id: self.links[&(user.clone(), source.clone())].link_id.clone(),
                    sink_link_id: self.links[&(user.clone(), sink.clone())].link_id.clone(),
                    resource_set: ResourceSet::new(resource_types.iter().cloned()),
                    purposes: purposes.iter().cloned().collect(),
                    expires_at: None,
                };
                self.bus.send(user, OPERATOR, GRANT_REQUEST, &request);
                let grant = self.op.grant_consent(&self.accounts[user], request)?;
                self.bus.send(
                    OPERATOR,
                    user,
                    GRANT_RESPONSE,
                    &json!({"record": grant.record, "receipt": grant.receipt}),
                );
                self.consents.insert(label.clone(), grant.record.consent_id);
                self.dispatch()
            }
            Step::SetStatus { grant, action } => {
                self.bus.phase = Phase::Consent;
                let user = self.shapes[grant].user.clone();
                let consent_id = self.consents[grant].clone();
                self.bus.send(
                    &user,
                    OPERATOR,
                    STATUS_REQUEST,
                    &json!({"consent_id": consent_id, "action": action}),
                );
                match self
                    .op
                    .set_consent_status(&self.accounts[&user], &consent_id, *action)
                {
                    Ok(record) => self.bus.send(OPERATOR, &user, STATUS_RESPONSE, &record),
                    Err(e) => {
                        self.bus
                            .send(OPERATOR, &user, ERROR_RESPONSE, &error_body(&e));
                        self.outcomes
                            .push(json!({"step": n, "grant": grant, "outcome": e.code()}));
                    }
                }
                self.dispatch()
            }
            Step::AdvanceClock { seconds } => {
                self.clock.advance(Duration::seconds(*seconds));
                Ok(())
            }
            Step::Fetch {
                grant,
                resource_types,
                window,
            } => {
                let types = if resource_types.is_empty() {
                    self.shapes[grant].resource_types.clone()
                } else {
                    resource_types.clone()
                };
                self.fetch(n, grant, &types, window.as_ref())
            }
        }
    }

    fn register(&mut self, party: &str) -> Result<()> {
        self.bus.phase = Phase::Registration;
        let p = self.scenario.party(party).expect("validated");
        let registration =
            service_registration(self.scenario, party, &format!("http://{party}.sim"));
        self.bus
            .send(party, OPERATOR, REGISTER_REQUEST, &registration);
        let registered = self.op.register_service(registration)?;
        self.bus
            .send(OPERATOR, party, REGISTER_RESPONSE, &registered.entry);
        let id = registered.entry.descriptor.service_id.clone();
        let role = match p.kind {
            PartyKind::Source => {
                Role::Source(DataSource::new(id.clone(), self.keys.clone(), self.ttl))
            }
            PartyKind::Reasoner => Role::Reasoner(ReasonerService::new(
                id.clone(),
                self.keys.clone(),
                self.ttl,
            )),
            _ => Role::App {
                sink: DataSink::new(id.clone(), self.keys.clone()),
                received: Vec::new(),
            },
        };
        self.services.insert(
            party.to_string(),
            Service {
                id,
                secret: registered.service_secret,
                role,
            },
        );
        Ok(())
    }

    /// Delivers every queued operator notice, one notice and one ack each.
    fn dispatch(&mut self) -> Result<()> {
        let now = self.clock.now();
        let Run {
            op, bus, services, ..
        } = self;
        let party_of: BTreeMap<ServiceId, String> = services
            .iter()
            .map(|(p, s)| (s.id.clone(), p.clone()))
            .collect();
        op.dispatch_with(&mut |d| {
            let party = party_of
                .get(&d.target)
                .ok_or_else(|| Error::NotFound(format!("no party for {}", d.target)))?;
            bus.send(OPERATOR, party, NOTICE, &d.event);
            let ack = apply_notice(&services[party].role, &d.event, now)?;
            bus.send(party, OPERATOR, NOTICE_ACK, &ack);
            Ok(())
        });
        Ok(())
    }

    fn phase_for(&mut self, grant: &str) -> Phase {
        if self.accessed.insert(grant.to_string()) {
            Phase::FirstAccess
        } else {
            Phase::SteadyState
        }
    }

    fn fetch(
        &mut self,
        n: usize,
        grant: &str,
        types: &[String],
        window: Option<&TimeRange>,
    ) -> Result<()> {
        let shape = self.shapes[grant].clone();
        let consent_id = self.consents[grant].clone();
        let held = match &self.services[&shape.sink].role {
            Role::Reasoner(r) => r.sink.token(&consent_id),
            Role::App { sink, .. } => sink.token(&consent_id),
            Role::Source(_) => None,
        };
        let Some(held) = held else {
            self.outcomes
                .push(json!({"step": n, "grant": grant, "outcome": "no-token"}));
            return Ok(());
        };
        let mut fetched: Vec<Observation> = Vec::new();
        for rt in types {
            let mut cursor: Option<String> = None;
            loop {
                self.bus.phase = self.phase_for(grant);
                let request = DataRequest {
                    token: held.token.clone(),
                    resource_type: rt.clone(),
                    time_range: window.copied(),
                    cursor: cursor.clone(),
                };
                match self.access(&shape, &request) {
                    Ok(Served::Page(page)) => {
                        cursor = page.next_cursor.clone();
                        fetched.extend(page.observations);
                    }
                    Ok(Served::Inference(response)) => {
                        if let Role::App { received, .. } =
                            &mut self.services.get_mut(&shape.sink).unwrap().role
                        {
                            received.push(response);
                        }
                        cursor = None;
                    }
                    Err(e) => {
                        self.outcomes.push(json!({
                            "step": n, "grant": grant, "resource_type": rt, "outcome": e.code()
                        }));
                        break;
                    }
                }
                if cursor.is_none() {
                    break;
                }
            }
        }
        if !fetched.is_empty() {
            match &self.services[&shape.sink].role {
                Role::Reasoner(r) => {
                    r.ingest(IngestBatch {
                        consent_id,
                        observations: fetched,
                    })?;
                }
                Role::App { sink, .. } => {
                    sink.store(&consent_id, fetched)?;
                }
                Role::Source(_) => {}
            }
        }
        self.outcomes
            .push(json!({"step": n, "grant": grant, "outcome": "ok"}));
        Ok(())
    }

    /// One request from the grant's sink to its source, with introspection
    /// when the source has no usable cached status.
    fn access(&mut self, shape: &GrantShape, request: &DataRequest) -> Result<Served> {
        let now = self.clock.now();
        let Run {
            op, bus, services, ..
        } = self;
        let source = &services[&shape.source];
        let is_inference = matches!(source.role, Role::Reasoner(_));
        let (req_kind, resp_kind) = if is_inference {
            (RECOMMENDATIONS_REQUEST, RECOMMENDATIONS_RESPONSE)
        } else {
            (DATA_REQUEST, DATA_RESPONSE)
        };
        let query: BTreeMap<&str, String> = range_query(request.time_range.as_ref())
            .into_iter()
            .collect();
        bus.send(
            &shape.sink,
            &shape.source,
            req_kind,
            &json!({
                "resource_type": request.resource_type,
                "query": query,
                "cursor": request.cursor,
                "authorization": format!("Bearer {}", request.token),
            }),
        );
        let result = (|| {
            let authorization = match &source.role {
                Role::Source(ds) => ds.authorize(request, now),
                Role::Reasoner(r) => r.authorize(request, now),
                Role::App { .. } => Err(Error::Role("an app serves no data".into())),
            }?;
            let claims = match authorization {
                Authorization::Granted(claims) => claims,
                Authorization::NeedsIntrospection(claims) => {
                    let live = introspect(op, bus, &shape.source, source, &claims);
                    match &source.role {
                        Role::Source(ds) => ds.complete(claims, request, live, now),
                        Role::Reasoner(r) => r.complete(claims, request, live, now),
                        Role::App { .. } => unreachable!(),
                    }?
                }
            };
            match &source.role {
                Role::Source(ds) => ds.serve(&claims, request).map(Served::Page),
                Role::Reasoner(r) => r.serve(&claims, request, now).map(Served::Inference),
                Role::App { .. } => unreachable!(),
            }
        })();
        match &result {
            Ok(Served::Page(page)) => bus.send(&shape.source, &shape.sink, resp_kind, page),
            Ok(Served::Inference(response)) => {
                bus.send(&shape.source, &shape.sink, resp_kind, response)
            }
            Err(e) => bus.send(&shape.source, &shape.sink, ERROR_RESPONSE, &error_body(e)),
        }
        result
    }

    fn final_state(&self) -> Result<BTreeMap<String, Value>> {
        let mut state = BTreeMap::new();
        let mut consents = BTreeMap::new();
        for (label, id) in &self.consents {
            let user = &self.shapes[label].user;
            let view = self
                .op
                .list_consents(&self.accounts[user])?
                .into_iter()
                .find(|v| &v.record.consent_id == id);
            consents.insert(
                label.clone(),
                match view {
                    Some(v) => json!({"status": v.record.status, "version": v.record.version}),
                    None => json!({"status": "erased"}),
                },
            );
        }
        state.insert(
            OPERATOR.to_string(),
            json!({
                "accounts": self.accounts.len(),
                "links": self.links.len(),
                "consents": consents,
                "pending_deliveries": self.op.pending_deliveries().len(),
            }),
        );
        for (party, service) in &self.services {
            let value = match &service.role {
                Role::Source(ds) => json!({"observations": ds.store.count()}),
                Role::Reasoner(r) => json!({
                    "stored_observations": r.sink.stored_count(),
                    "timelines": r.pseudonyms().len(),
                    "held_tokens": r.sink.tokens().len(),
                }),
                Role::App { sink, received } => json!({
                    "stored_observations": sink.stored_count(),
                    "held_tokens": sink.tokens().len(),
                    "recommendations": received
                        .last()
                        .and_then(|r| r.recommendations.as_ref())
                        .map(|recs| recs.iter().map(|r| format!("{:?}", r.name)).collect::<Vec<_>>())
                        .unwrap_or_default(),
                }),
            };
            state.insert(party.clone(), value);
        }
        state.insert("fetches".to_string(), Value::Array(self.outcomes.clone()));
        Ok(state)
    }
}

/// The registration a scenario party sends: the bundled descriptor for its
/// kind under the party's name, with keys derived from the scenario seed.
pub(crate) fn service_registration(
    scenario: &Scenario,
    party: &str,
    endpoint: &str,
) -> ServiceRegistration {
    let p = scenario.party(party).expect("validated");
    let index = scenario.parties.iter().position(|q| q.id == party).unwrap() as u64;
    let service_keys = KeyMaterial::from_seed(scenario.seed.wrapping_add(1 + index));
    let mut registration: ServiceRegistration = match p.kind {
        PartyKind::Source => fixtures::w2e_registration(endpoint, &service_keys),
        PartyKind::Reasoner => fixtures::reasoner_registration(endpoint, &service_keys),
        PartyKind::App => fixtures::health_app_registration(endpoint, &service_keys),
        PartyKind::User => unreachable!("validated"),
    };
    registration.name = p.name.clone().unwrap_or_else(|| party.to_string());
    if registration.role != ServiceRole::Source {
        // a sink declares every purpose it is later granted
        registration.declared_purposes = scenario
            .steps
            .iter()
            .filter_map(|s| match s {
                Step::Grant { sink, purposes, .. } if sink == party => Some(purposes.clone()),
                _ => None,
            })
            .flatten()
            .chain(registration.declared_purposes.iter().cloned())
            .collect();
    }
    registration
}

enum Served {
    Page(DataPage),
    Inference(InferenceResponse),
}

fn introspect(
    op: &Operator,
    bus: &mut Bus,
    party: &str,
    source: &Service,
    claims: &TokenClaims,
) -> Result<Introspection> {
    let request = IntrospectRequest {
        consent_id: Some(claims.consent_id.clone()),
        token: None,
    };
    bus.send(party, OPERATOR, INTROSPECT_REQUEST, &request);
    let live = op.introspect(&source.id, &source.secret, &request);
    match &live {
        Ok(i) => bus.send(OPERATOR, party, INTROSPECT_RESPONSE, i),
        Err(e) => bus.send(OPERATOR, party, INTROSPECT_RESPONSE, &error_body(e)),
    }
    live
}

fn apply_notice(
    role: &Role,
    event: &NotificationEvent,
    now: chrono::DateTime<chrono::Utc>,
) -> Result<NoticeAck> {
    match role {
        Role::Source(ds) => ds.apply_notice(event, now),
        Role::Reasoner(r) => r.apply_notice(event, now).map(|a| NoticeAck {
            event_id: a.event_id,
            applied: a.applied,
        }),
        Role::App { sink, .. } => sink.apply_notice(event).map(|n| NoticeAck {
            event_id: event.event_id.clone(),
            applied: n != SinkNotice::Ignored,
        }),
    }
}
