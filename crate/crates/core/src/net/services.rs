//! HTTP front ends for the reference source, the reasoner and the app.
//!
//! Each service registers with one or more operators before it starts
//! serving. `/admin/*` routes drive the service from outside (sync vendor
//! data, pull, fetch) and require the admin token when one is set.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;

use super::client::{OperatorClient, ServiceClient};
use super::log::RequestLog;
use super::{bearer, local_url, serve, ApiResult, RangeQuery, Server};
use crate::clock::Clock;
use crate::consent::{TimeRange, TokenClaims};
use crate::datakit::{
    proxy_sync, Authorization, DataPage, DataRequest, DataSink, DataSource, IngestReport,
    NoticeAck, OperatorKeys, SinkNotice, VendorFixture,
};
use crate::error::{Error, Result};
use crate::fixtures::{self, RECOMMENDATIONS};
use crate::ids::{ConsentId, OperatorId, Pseudonym, ServiceId};
use crate::operator::{
    IntrospectRequest, Introspection, NotificationEvent, OperatorInfo, RegisteredService,
    ServiceRegistration,
};
use crate::reasoner::service::{InferenceResponse, IngestBatch, IngestReceipt, ReasonerNoticeAck};
use crate::reasoner::{rules_document, ReasonerService};

type JsonBody<T> = std::result::Result<Json<T>, JsonRejection>;
type QueryParams = std::result::Result<Query<RangeQuery>, QueryRejection>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncRequest {
    /// Vendor user key to the pseudonym the operator minted for this source.
    pub pseudonyms: BTreeMap<String, Pseudonym>,
    /// Bundled vendor data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<Vec<VendorFixture>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullRequest {
    pub consent_id: ConsentId,
    /// Every type the consent covers when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resource_types: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeRange>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PullFailure {
    pub resource_type: String,
    pub error_code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PullReport {
    pub consent_id: ConsentId,
    pub fetched: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receipt: Option<IngestReceipt>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PullFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppFetch {
    pub consent_id: ConsentId,
    #[serde(default = "default_inference")]
    pub resource_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeRange>,
}

fn default_inference() -> String {
    RECOMMENDATIONS.into()
}

#[derive(Debug, Clone)]
struct Session {
    client: OperatorClient,
    service_id: ServiceId,
    secret: String,
}

/// What every service needs besides its role: its clock, the operators it
/// is registered with and their keys.
pub struct ServiceContext {
    pub label: String,
    pub clock: Arc<dyn Clock>,
    pub keys: Arc<OperatorKeys>,
    pub log: Option<RequestLog>,
    admin_digest: Option<[u8; 32]>,
    sessions: RwLock<BTreeMap<OperatorId, Session>>,
}

impl std::fmt::Debug for ServiceContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceContext")
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

fn digest(s: &str) -> [u8; 32] {
    Sha256::digest(s.as_bytes()).into()
}

impl ServiceContext {
    pub fn new(label: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self {
            label: label.into(),
            clock,
            keys: Arc::new(OperatorKeys::new()),
            log: None,
            admin_digest: None,
            sessions: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn with_log(mut self, log: RequestLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_admin_token(mut self, token: Option<&str>) -> Self {
        self.admin_digest = token.map(digest);
        self
    }

    fn operator_client(&self, url: &str) -> OperatorClient {
        let client = OperatorClient::new(url);
        match &self.log {
            Some(log) => client.with_log(log.clone()).as_party(self.label.clone()),
            None => client,
        }
    }

    /// Trusts the operator's key and registers with it.
    pub async fn join_operator(
        &self,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<(OperatorInfo, RegisteredService)> {
        let client = self.operator_client(operator_url);
        let info = client.info().await?;
        self.keys
            .trust(info.operator_id.clone(), info.verification_key);
        let registered = client.register_service(registration).await?;
        self.sessions.write().unwrap().insert(
            info.operator_id.clone(),
            Session {
                client,
                service_id: registered.entry.descriptor.service_id.clone(),
                secret: registered.service_secret.clone(),
            },
        );
        Ok((info, registered))
    }

    /// Asks the operator that issued `claims` for the live status.
    pub async fn introspect(&self, claims: &TokenClaims) -> Result<Introspection> {
        let session = self
            .sessions
            .read()
            .unwrap()
            .get(&claims.operator_id)
            .cloned()
            .ok_or_else(|| Error::UntrustedOperator(claims.operator_id.to_string()))?;
        let request = IntrospectRequest {
            consent_id: Some(claims.consent_id.clone()),
            token: None,
        };
        session
            .client
            .introspect(&session.service_id, &session.secret, &request)
            .await
    }

    fn check_admin(&self, headers: &HeaderMap) -> Result<()> {
        let Some(expected) = &self.admin_digest else {
            return Ok(());
        };
        let given = bearer(headers).map(digest).unwrap_or([0; 32]);
        // equal-length digests, compared without early exit
        let diff = given
            .iter()
            .zip(expected)
            .fold(0u8, |acc, (a, b)| acc | (a ^ b));
        if diff == 0 {
            Ok(())
        } else {
            Err(Error::Forbidden("admin token required".into()))
        }
    }

    fn peer(&self, base: &str) -> ServiceClient {
        let client = ServiceClient::new(base);
        match &self.log {
            Some(log) => client.with_log(log.clone(), self.label.clone(), base.to_string()),
            None => client,
        }
    }

    fn ttl(info: &OperatorInfo) -> Duration {
        Duration::seconds(info.introspection_ttl_secs as i64)
    }
}

fn data_request(
    headers: &HeaderMap,
    resource_type: String,
    query: QueryParams,
) -> ApiResult<DataRequest> {
    let Query(q) = query?;
    let token =
        bearer(headers).ok_or_else(|| Error::TokenMalformed("bearer token required".into()))?;
    Ok(DataRequest {
        token: token.to_string(),
        resource_type,
        time_range: q.time_range()?,
        cursor: q.cursor,
    })
}

fn with_endpoint(registration: &ServiceRegistration, url: &str) -> ServiceRegistration {
    let mut r = registration.clone();
    if r.callback_endpoint.is_empty() {
        r.callback_endpoint = url.to_string();
    }
    r
}

// ----- source -----

#[derive(Debug, Clone)]
pub struct SourceService {
    pub ctx: Arc<ServiceContext>,
    pub source: Arc<DataSource>,
}

impl SourceService {
    /// Registers with the operator (an empty callback endpoint becomes the
    /// listener's URL) and starts serving.
    pub async fn launch(
        ctx: ServiceContext,
        listener: TcpListener,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<(Self, Server)> {
        let registration = with_endpoint(registration, &local_url(&listener)?);
        let (info, registered) = ctx.join_operator(operator_url, &registration).await?;
        let id = registered.entry.descriptor.service_id;
        let source = DataSource::new(id, ctx.keys.clone(), ServiceContext::ttl(&info));
        let this = Self {
            ctx: Arc::new(ctx),
            source: Arc::new(source),
        };
        let server = serve(listener, this.router())?;
        Ok((this, server))
    }

    /// Registers with a further operator; tokens it issues are honored too.
    pub async fn join(
        &self,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<RegisteredService> {
        let (_, registered) = self.ctx.join_operator(operator_url, registration).await?;
        self.source
            .add_identity(registered.entry.descriptor.service_id.clone());
        Ok(registered)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/data/:resource_type", get(source_data))
            .route("/notices", post(source_notice))
            .route("/admin/sync", post(source_sync))
            .route("/admin/state", get(source_state))
            .with_state(self.clone())
    }
}

async fn source_data(
    State(s): State<SourceService>,
    Path(resource_type): Path<String>,
    headers: HeaderMap,
    query: QueryParams,
) -> ApiResult<Json<DataPage>> {
    let request = data_request(&headers, resource_type, query)?;
    let now = s.ctx.clock.now();
    let claims = match s.source.authorize(&request, now)? {
        Authorization::Granted(claims) => claims,
        Authorization::NeedsIntrospection(claims) => {
            let live = s.ctx.introspect(&claims).await;
            s.source
                .complete(claims, &request, live, s.ctx.clock.now())?
        }
    };
    Ok(Json(s.source.serve(&claims, &request)?))
}

async fn source_notice(
    State(s): State<SourceService>,
    body: JsonBody<NotificationEvent>,
) -> ApiResult<Json<NoticeAck>> {
    let Json(event) = body?;
    Ok(Json(s.source.apply_notice(&event, s.ctx.clock.now())?))
}

async fn source_sync(
    State(s): State<SourceService>,
    headers: HeaderMap,
    body: JsonBody<SyncRequest>,
) -> ApiResult<Json<IngestReport>> {
    s.ctx.check_admin(&headers)?;
    let Json(req) = body?;
    let fixtures = req.fixtures.unwrap_or_else(fixtures::vendor_fixtures);
    Ok(Json(proxy_sync(
        &s.source.store,
        &fixtures,
        &req.pseudonyms,
    )))
}

async fn source_state(
    State(s): State<SourceService>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    s.ctx.check_admin(&headers)?;
    Ok(Json(json!({
        "observations": s.source.store.count(),
        "subjects": s.source.store.pseudonyms().len(),
    })))
}

// ----- reasoner -----

#[derive(Debug, Clone)]
pub struct ReasonerHttp {
    pub ctx: Arc<ServiceContext>,
    pub reasoner: Arc<ReasonerService>,
}

impl ReasonerHttp {
    pub async fn launch(
        ctx: ServiceContext,
        listener: TcpListener,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<(Self, Server)> {
        let registration = with_endpoint(registration, &local_url(&listener)?);
        let (info, registered) = ctx.join_operator(operator_url, &registration).await?;
        let id = registered.entry.descriptor.service_id;
        let reasoner = ReasonerService::new(id, ctx.keys.clone(), ServiceContext::ttl(&info));
        let this = Self {
            ctx: Arc::new(ctx),
            reasoner: Arc::new(reasoner),
        };
        let server = serve(listener, this.router())?;
        Ok((this, server))
    }

    pub async fn join(
        &self,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<RegisteredService> {
        let (_, registered) = self.ctx.join_operator(operator_url, registration).await?;
        self.reasoner
            .add_identity(registered.entry.descriptor.service_id.clone());
        Ok(registered)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/recommendations", get(reasoner_recommendations))
            .route("/facts", get(reasoner_facts))
            .route("/rules", get(reasoner_rules))
            .route("/notices", post(reasoner_notice))
            .route("/ingest", post(reasoner_ingest))
            .route("/admin/pull", post(reasoner_pull))
            .route("/admin/state", get(reasoner_state))
            .with_state(self.clone())
    }

    async fn infer(
        &self,
        headers: &HeaderMap,
        resource_type: &str,
        query: QueryParams,
    ) -> ApiResult<InferenceResponse> {
        let request = data_request(headers, resource_type.to_string(), query)?;
        let now = self.ctx.clock.now();
        let claims = match self.reasoner.authorize(&request, now)? {
            Authorization::Granted(claims) => claims,
            Authorization::NeedsIntrospection(claims) => {
                let live = self.ctx.introspect(&claims).await;
                self.reasoner
                    .complete(claims, &request, live, self.ctx.clock.now())?
            }
        };
        Ok(self
            .reasoner
            .serve(&claims, &request, self.ctx.clock.now())?)
    }

    /// Fetches the consent's data from its source and ingests it. A failing
    /// resource type is reported and the others still go through.
    pub async fn pull(&self, req: &PullRequest) -> Result<PullReport> {
        let held = self.reasoner.sink.token(&req.consent_id).ok_or_else(|| {
            match self.reasoner.sink.status(&req.consent_id) {
                Some(_) => Error::ConsentInactive,
                None => Error::Forbidden(format!("no token held for consent {}", req.consent_id)),
            }
        })?;
        let types = if req.resource_types.is_empty() {
            held.resource_types.clone()
        } else {
            req.resource_types.clone()
        };
        let peer = self.ctx.peer(&held.source_endpoint);
        let mut observations = Vec::new();
        let mut failures = Vec::new();
        for rt in &types {
            match peer.fetch_all(&held.token, rt, req.window.as_ref()).await {
                Ok(batch) => observations.extend(batch),
                Err(e) => failures.push(PullFailure {
                    resource_type: rt.clone(),
                    error_code: e.code().to_string(),
                    message: e.message(),
                }),
            }
        }
        let fetched = observations.len();
        let receipt = if fetched > 0 {
            Some(self.reasoner.ingest(IngestBatch {
                consent_id: req.consent_id.clone(),
                observations,
            })?)
        } else {
            None
        };
        Ok(PullReport {
            consent_id: req.consent_id.clone(),
            fetched,
            receipt,
            failures,
        })
    }
}

async fn reasoner_recommendations(
    State(s): State<ReasonerHttp>,
    headers: HeaderMap,
    query: QueryParams,
) -> ApiResult<Json<InferenceResponse>> {
    Ok(Json(
        s.infer(&headers, fixtures::RECOMMENDATIONS, query).await?,
    ))
}

async fn reasoner_facts(
    State(s): State<ReasonerHttp>,
    headers: HeaderMap,
    query: QueryParams,
) -> ApiResult<Json<InferenceResponse>> {
    Ok(Json(s.infer(&headers, fixtures::FACTS, query).await?))
}

async fn reasoner_rules() -> Json<Value> {
    Json(rules_document())
}

async fn reasoner_notice(
    State(s): State<ReasonerHttp>,
    body: JsonBody<NotificationEvent>,
) -> ApiResult<Json<ReasonerNoticeAck>> {
    let Json(event) = body?;
    Ok(Json(s.reasoner.apply_notice(&event, s.ctx.clock.now())?))
}

async fn reasoner_ingest(
    State(s): State<ReasonerHttp>,
    headers: HeaderMap,
    body: JsonBody<IngestBatch>,
) -> ApiResult<Json<IngestReceipt>> {
    s.ctx.check_admin(&headers)?;
    let Json(batch) = body?;
    Ok(Json(s.reasoner.ingest(batch)?))
}

async fn reasoner_pull(
    State(s): State<ReasonerHttp>,
    headers: HeaderMap,
    body: JsonBody<PullRequest>,
) -> ApiResult<Json<PullReport>> {
    s.ctx.check_admin(&headers)?;
    let Json(req) = body?;
    Ok(Json(s.pull(&req).await?))
}

async fn reasoner_state(
    State(s): State<ReasonerHttp>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    s.ctx.check_admin(&headers)?;
    let r = &s.reasoner;
    Ok(Json(json!({
        "stored_observations": r.sink.stored_count(),
        "timelines": r.pseudonyms().len(),
        "held_tokens": r.sink.tokens().len(),
    })))
}

// ----- app -----

#[derive(Debug, Clone)]
pub struct AppService {
    pub ctx: Arc<ServiceContext>,
    pub sink: Arc<DataSink>,
    received: Arc<Mutex<Vec<InferenceResponse>>>,
}

impl AppService {
    pub async fn launch(
        ctx: ServiceContext,
        listener: TcpListener,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<(Self, Server)> {
        let registration = with_endpoint(registration, &local_url(&listener)?);
        let (_, registered) = ctx.join_operator(operator_url, &registration).await?;
        let sink = DataSink::new(registered.entry.descriptor.service_id, ctx.keys.clone());
        let this = Self {
            ctx: Arc::new(ctx),
            sink: Arc::new(sink),
            received: Arc::new(Mutex::new(Vec::new())),
        };
        let server = serve(listener, this.router())?;
        Ok((this, server))
    }

    pub async fn join(
        &self,
        operator_url: &str,
        registration: &ServiceRegistration,
    ) -> Result<RegisteredService> {
        let (_, registered) = self.ctx.join_operator(operator_url, registration).await?;
        self.sink
            .add_identity(registered.entry.descriptor.service_id.clone());
        Ok(registered)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/notices", post(app_notice))
            .route("/admin/fetch", post(app_fetch))
            .route("/admin/received", get(app_received))
            .route("/admin/state", get(app_state))
            .with_state(self.clone())
    }

    /// Asks the reasoner named in the held token for an inference result.
    pub async fn fetch(&self, req: &AppFetch) -> Result<InferenceResponse> {
        let held = self.sink.token(&req.consent_id).ok_or_else(|| {
            match self.sink.status(&req.consent_id) {
                Some(_) => Error::ConsentInactive,
                None => Error::Forbidden(format!("no token held for consent {}", req.consent_id)),
            }
        })?;
        let response = self
            .ctx
            .peer(&held.source_endpoint)
            .inference(&held.token, &req.resource_type, req.window.as_ref())
            .await?;
        if !self.is_source_pseudonym(&held.token, &response.pseudonym) {
            return Err(Error::Validation(
                "response is about another subject".into(),
            ));
        }
        self.received.lock().unwrap().push(response.clone());
        Ok(response)
    }

    fn is_source_pseudonym(&self, token: &str, pseudonym: &Pseudonym) -> bool {
        crate::consent::token::decode_unverified(token.as_bytes())
            .map(|(c, _, _)| &c.pseudonym == pseudonym)
            .unwrap_or(false)
    }

    pub fn received(&self) -> Vec<InferenceResponse> {
        self.received.lock().unwrap().clone()
    }
}

async fn app_notice(
    State(s): State<AppService>,
    body: JsonBody<NotificationEvent>,
) -> ApiResult<Json<NoticeAck>> {
    let Json(event) = body?;
    let outcome = s.sink.apply_notice(&event)?;
    if let SinkNotice::Purged { .. } = outcome {
        s.received.lock().unwrap().clear();
    }
    Ok(Json(NoticeAck {
        event_id: event.event_id.clone(),
        applied: outcome != SinkNotice::Ignored,
    }))
}

async fn app_fetch(
    State(s): State<AppService>,
    headers: HeaderMap,
    body: JsonBody<AppFetch>,
) -> ApiResult<Json<InferenceResponse>> {
    s.ctx.check_admin(&headers)?;
    let Json(req) = body?;
    Ok(Json(s.fetch(&req).await?))
}

async fn app_received(
    State(s): State<AppService>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<InferenceResponse>>> {
    s.ctx.check_admin(&headers)?;
    Ok(Json(s.received()))
}

async fn app_state(State(s): State<AppService>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    s.ctx.check_admin(&headers)?;
    Ok(Json(json!({
        "stored_observations": s.sink.stored_count(),
        "held_tokens": s.sink.tokens().len(),
        "received": s.received.lock().unwrap().len(),
    })))
}
