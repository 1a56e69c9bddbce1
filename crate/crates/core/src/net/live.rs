//! Runs a scenario against real HTTP servers on loopback ports.
//!
//! The operator and every service share one manual clock that starts at the
//! scenario start, and one request log labelled with scenario party ids, so
//! the log of a live run reads like the simulator transcript.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use super::client::{OperatorClient, ServiceClient};
use super::log::{LoggedMessage, RequestLog};
use super::operator::OperatorServer;
use super::services::{
    AppFetch, AppService, PullRequest, ReasonerHttp, ServiceContext, SourceService, SyncRequest,
};
use super::{bind, local_url, Server};
use crate::clock::ManualClock;
use crate::consent::{ConsentReceipt, KeyMaterial, ResourceSet, ServiceLink, TimeRange};
use crate::error::{Error, Result};
use crate::fixtures::DEMO_CREDENTIAL;
use crate::flowsim::scenario::GrantShape;
use crate::flowsim::{service_registration, PartyKind, Phase, Scenario, Step, OPERATOR};
use crate::ids::{AccountId, ConsentId, SeededIds};
use crate::operator::{GrantRequest, MemoryStore, Operator, OperatorSettings, Store};
use crate::reasoner::service::InferenceResponse;

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub name: String,
    pub elapsed_ms: f64,
}

/// The step a live run stopped at.
#[derive(Debug, Clone)]
pub struct LiveFailure {
    pub step: usize,
    pub name: String,
    pub error: Error,
}

impl fmt::Display for LiveFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} ({}) failed: {}",
            self.step, self.name, self.error
        )
    }
}

impl std::error::Error for LiveFailure {}

#[derive(Debug, Clone, Serialize)]
pub struct LiveRun {
    pub scenario: String,
    pub operator_url: String,
    pub steps: Vec<StepRecord>,
    pub log: Vec<LoggedMessage>,
    pub outcomes: Vec<Value>,
    pub receipts: Vec<ConsentReceipt>,
    pub received: Vec<InferenceResponse>,
    /// Recommendation names from the last inference an app received.
    pub recommendations: Vec<String>,
}

enum Role {
    Source(SourceService),
    Reasoner(ReasonerHttp),
    App(AppService),
}

struct LiveParty {
    role: Role,
    admin: ServiceClient,
    server: Server,
}

pub struct LiveRunner {
    scenario: Scenario,
    shapes: BTreeMap<String, GrantShape>,
    clock: Arc<ManualClock>,
    log: RequestLog,
    operator: Option<OperatorServer>,
    operator_url: String,
    client: OperatorClient,
    parties: BTreeMap<String, LiveParty>,
    accounts: BTreeMap<String, AccountId>,
    links: BTreeMap<(String, String), ServiceLink>,
    consents: BTreeMap<String, ConsentId>,
    receipts: Vec<ConsentReceipt>,
    accessed: BTreeSet<String>,
    outcomes: Vec<Value>,
    steps: Vec<StepRecord>,
    next: usize,
}

fn step_name(step: &Step) -> &'static str {
    match step {
        Step::Register { .. } => "register",
        Step::CreateAccount { .. } => "account",
        Step::Link { .. } => "link",
        Step::Sync { .. } => "sync",
        Step::Grant { .. } => "grant",
        Step::SetStatus { .. } => "status",
        Step::AdvanceClock { .. } => "advance-clock",
        Step::Fetch { .. } => "fetch",
    }
}

impl LiveRunner {
    /// Starts the operator on an ephemeral loopback port. Services start as
    /// their register steps run.
    pub async fn start(scenario: Scenario) -> Result<Self> {
        Self::start_with_store(scenario, Arc::new(MemoryStore::new())).await
    }

    /// Like [`LiveRunner::start`], with the operator persisting to `store`.
    pub async fn start_with_store(scenario: Scenario, store: Arc<dyn Store>) -> Result<Self> {
        scenario.validate()?;
        let clock = Arc::new(ManualClock::new(scenario.start));
        let operator = Arc::new(Operator::new(
            OperatorSettings::new(OPERATOR),
            KeyMaterial::from_seed(scenario.seed),
            store,
            clock.clone(),
            Arc::new(SeededIds::new(scenario.seed)),
        ));
        let log = RequestLog::new();
        let server =
            OperatorServer::start(operator, bind("127.0.0.1:0").await?, Some(log.clone()))?;
        let operator_url = server.url();
        Ok(Self {
            shapes: scenario.grants(),
            scenario,
            clock,
            client: OperatorClient::new(&operator_url).with_log(log.clone()),
            log,
            operator: Some(server),
            operator_url,
            parties: BTreeMap::new(),
            accounts: BTreeMap::new(),
            links: BTreeMap::new(),
            consents: BTreeMap::new(),
            receipts: Vec::new(),
            accessed: BTreeSet::new(),
            outcomes: Vec::new(),
            steps: Vec::new(),
            next: 0,
        })
    }

    pub fn log(&self) -> &RequestLog {
        &self.log
    }

    pub fn operator_url(&self) -> &str {
        &self.operator_url
    }

    /// Name of the step that runs next, if any.
    pub fn next_step(&self) -> Option<&'static str> {
        self.scenario.steps.get(self.next).map(step_name)
    }

    /// Takes the operator off the network; later operator calls fail.
    pub async fn stop_operator(&mut self) {
        if let Some(op) = self.operator.take() {
            op.shutdown().await;
        }
    }

    /// Runs one step. `Ok(None)` once the script is done.
    pub async fn step(&mut self) -> std::result::Result<Option<StepRecord>, LiveFailure> {
        let Some(step) = self.scenario.steps.get(self.next).cloned() else {
            return Ok(None);
        };
        self.next += 1;
        let index = self.next;
        let name = step_name(&step);
        let started = Instant::now();
        self.run_step(index, &step)
            .await
            .map_err(|error| LiveFailure {
                step: index,
                name: name.to_string(),
                error,
            })?;
        let record = StepRecord {
            index,
            name: name.to_string(),
            elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
        };
        self.steps.push(record.clone());
        Ok(Some(record))
    }

    /// Runs the remaining steps, collects the results and stops every server.
    pub async fn finish(mut self) -> std::result::Result<LiveRun, LiveFailure> {
        while self.step().await?.is_some() {}
        let mut received = Vec::new();
        for party in self.parties.values() {
            if let Role::App(app) = &party.role {
                received.extend(app.received());
            }
        }
        let recommendations = received
            .iter()
            .rev()
            .find_map(|r| r.recommendations.as_ref())
            .map(|recs| recs.iter().map(|r| format!("{:?}", r.name)).collect())
            .unwrap_or_default();
        let run = LiveRun {
            scenario: self.scenario.name.clone(),
            operator_url: self.operator_url.clone(),
            steps: std::mem::take(&mut self.steps),
            log: self.log.messages(),
            outcomes: std::mem::take(&mut self.outcomes),
            receipts: std::mem::take(&mut self.receipts),
            received,
            recommendations,
        };
        self.shutdown().await;
        Ok(run)
    }

    pub async fn shutdown(mut self) {
        for (_, party) in std::mem::take(&mut self.parties) {
            party.server.shutdown().await;
        }
        self.stop_operator().await;
    }

    async fn flush(&self) {
        if let Some(op) = &self.operator {
            op.dispatcher.flush().await;
        }
    }

    async fn run_step(&mut self, n: usize, step: &Step) -> Result<()> {
        match step {
            Step::Register { party } => {
                self.log.set_phase(Phase::Registration);
                self.register(party).await
            }
            Step::CreateAccount { user } => {
                self.log.set_phase(Phase::Registration);
                let account = self
                    .client
                    .as_party(user)
                    .create_account(user, DEMO_CREDENTIAL)
                    .await?;
                self.accounts.insert(user.clone(), account);
                Ok(())
            }
            Step::Link { user, service } => {
                self.log.set_phase(Phase::Registration);
                let service_id = self.service_id(service)?;
                let link = self
                    .client
                    .as_party(user)
                    .link(&self.accounts[user], DEMO_CREDENTIAL, &service_id)
                    .await?;
                self.links.insert((user.clone(), service.clone()), link);
                Ok(())
            }
            Step::Sync { source, user } => {
                let vendor_user = self
                    .scenario
                    .party(user)
                    .and_then(|p| p.vendor_user.clone())
                    .unwrap_or_else(|| user.clone());
                let pseudonym = self.links[&(user.clone(), source.clone())]
                    .pseudonym
                    .clone();
                let request = SyncRequest {
                    pseudonyms: [(vendor_user, pseudonym)].into(),
                    fixtures: None,
                };
                self.parties[source].admin.sync(&request).await?;
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
                self.log.set_phase(Phase::Consent);
                let request = GrantRequest {
                    source_link_id: self.links[&(user.clone(), source.clone())].link_id.clone(),
                    sink_link_id: self.links[&(user.clone(), sink.clone())].link_id.clone(),
                    resource_set: ResourceSet::new(resource_types.iter().cloned()),
                    purposes: purposes.iter().cloned().collect(),
                    expires_at: None,
                };
                let grant = self
                    .client
                    .as_party(user)
                    .grant(&self.accounts[user], DEMO_CREDENTIAL, &request)
                    .await?;
                self.consents.insert(label.clone(), grant.record.consent_id);
                self.receipts.push(grant.receipt);
                self.flush().await;
                Ok(())
            }
            Step::SetStatus { grant, action } => {
                self.log.set_phase(Phase::Consent);
                let user = self.shapes[grant].user.clone();
                let result = self
                    .client
                    .as_party(&user)
                    .set_status(
                        &self.accounts[&user],
                        DEMO_CREDENTIAL,
                        &self.consents[grant],
                        *action,
                    )
                    .await;
                match result {
                    Ok(_) => {}
                    Err(e @ Error::RetryableIo(_)) => return Err(e),
                    Err(e) => self
                        .outcomes
                        .push(json!({"step": n, "grant": grant, "outcome": e.code()})),
                }
                self.flush().await;
                Ok(())
            }
            Step::AdvanceClock { seconds } => {
                self.clock.advance(chrono::Duration::seconds(*seconds));
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
                self.fetch(n, grant, &types, window.as_ref()).await
            }
        }
    }

    fn service_id(&self, party: &str) -> Result<crate::ids::ServiceId> {
        let party = self
            .parties
            .get(party)
            .ok_or_else(|| Error::ScenarioInvalid(format!("{party} is not registered")))?;
        Ok(match &party.role {
            Role::Source(s) => s.source.service_id().clone(),
            Role::Reasoner(r) => r.reasoner.service_id().clone(),
            Role::App(a) => a.sink.service_id().clone(),
        })
    }

    async fn register(&mut self, party: &str) -> Result<()> {
        let listener = bind("127.0.0.1:0").await?;
        let url = local_url(&listener)?;
        // label the endpoint before anything can be logged against it
        self.log.alias(url.clone(), party);
        let registration = service_registration(&self.scenario, party, &url);
        let ctx = ServiceContext::new(party, self.clock.clone()).with_log(self.log.clone());
        let kind = self.scenario.party(party).expect("validated").kind;
        let (role, server) = match kind {
            PartyKind::Source => {
                let (s, server) =
                    SourceService::launch(ctx, listener, &self.operator_url, &registration).await?;
                (Role::Source(s), server)
            }
            PartyKind::Reasoner => {
                let (r, server) =
                    ReasonerHttp::launch(ctx, listener, &self.operator_url, &registration).await?;
                (Role::Reasoner(r), server)
            }
            PartyKind::App => {
                let (a, server) =
                    AppService::launch(ctx, listener, &self.operator_url, &registration).await?;
                (Role::App(a), server)
            }
            PartyKind::User => return Err(Error::ScenarioInvalid(format!("{party} is a user"))),
        };
        let admin = ServiceClient::new(&url);
        self.parties.insert(
            party.to_string(),
            LiveParty {
                role,
                admin,
                server,
            },
        );
        let id = self.service_id(party)?;
        self.log.alias(id.as_str(), party);
        Ok(())
    }

    /// Phase for the next request under `grant`. The grant only counts as
    /// accessed once a request actually went out.
    fn phase_for(&self, grant: &str) -> Phase {
        if self.accessed.contains(grant) {
            Phase::SteadyState
        } else {
            Phase::FirstAccess
        }
    }

    async fn fetch(
        &mut self,
        n: usize,
        grant: &str,
        types: &[String],
        window: Option<&TimeRange>,
    ) -> Result<()> {
        let shape = self.shapes[grant].clone();
        let consent_id = self.consents[grant].clone();
        for rt in types {
            self.log.set_phase(self.phase_for(grant));
            let before = self.log.messages().len();
            let party = &self.parties[&shape.sink];
            let outcome: Result<Vec<(String, String)>> = match &party.role {
                Role::Reasoner(_) => {
                    let request = PullRequest {
                        consent_id: consent_id.clone(),
                        resource_types: vec![rt.clone()],
                        window: window.copied(),
                    };
                    party.admin.pull(&request).await.map(|r| {
                        r.failures
                            .into_iter()
                            .map(|f| (f.resource_type, f.error_code))
                            .collect()
                    })
                }
                Role::App(_) => {
                    let request = AppFetch {
                        consent_id: consent_id.clone(),
                        resource_type: rt.clone(),
                        window: window.copied(),
                    };
                    party.admin.app_fetch(&request).await.map(|_| Vec::new())
                }
                Role::Source(_) => Ok(Vec::new()),
            };
            let sent = self.log.messages().len() > before;
            if sent {
                self.accessed.insert(grant.to_string());
            }
            match outcome {
                Ok(failures) => {
                    for (resource_type, code) in failures {
                        self.outcomes.push(json!({
                            "step": n, "grant": grant, "resource_type": resource_type, "outcome": code
                        }));
                    }
                }
                Err(e @ Error::RetryableIo(_)) => return Err(e),
                Err(e) if sent => {
                    self.outcomes.push(json!({
                        "step": n, "grant": grant, "resource_type": rt, "outcome": e.code()
                    }));
                }
                Err(_) => {
                    self.outcomes
                        .push(json!({"step": n, "grant": grant, "outcome": "no-token"}));
                    return Ok(());
                }
            }
        }
        self.outcomes
            .push(json!({"step": n, "grant": grant, "outcome": "ok"}));
        Ok(())
    }
}

/// Runs the whole scenario live and tears everything down.
pub async fn run_live(scenario: Scenario) -> std::result::Result<LiveRun, LiveFailure> {
    let runner = LiveRunner::start(scenario)
        .await
        .map_err(|error| LiveFailure {
            step: 0,
            name: "start".into(),
            error,
        })?;
    runner.finish().await
}
