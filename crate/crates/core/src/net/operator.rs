//! Operator REST API and the notification dispatcher.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{Mutex, Notify};
use tokio::task::JoinHandle;
use tower_http::cors::CorsLayer;

use super::log::RequestLog;
use super::{bearer, serve, ApiResult, Server};
use crate::consent::{ConsentAction, ConsentReceipt, ConsentRecord, ServiceLink};
use crate::error::{Error, Result};
use crate::flowsim::kinds::{NOTICE, NOTICE_ACK};
use crate::flowsim::OPERATOR;
use crate::ids::{AccountId, ConsentId, ServiceId};
use crate::operator::{
    ConsentView, DispatchSummary, ErasureReport, Grant, GrantRequest, ImportResult,
    IntrospectRequest, Introspection, Operator, OperatorInfo, PortableAccountDocument,
    RegisteredService, RegistryEntry, ServiceRegistration,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateAccount {
    pub display_name: String,
    pub credential: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedAccount {
    pub account_id: AccountId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRequest {
    pub service_id: ServiceId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusRequest {
    pub action: ConsentAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportRequest {
    pub document: PortableAccountDocument,
    pub credential: String,
}

/// Posts outbox events to service callbacks, in order per target.
#[derive(Clone)]
pub struct Dispatcher {
    op: Arc<Operator>,
    http: reqwest::Client,
    log: Option<RequestLog>,
    running: Arc<Mutex<()>>,
    wake: Arc<Notify>,
}

impl std::fmt::Debug for Dispatcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dispatcher").finish_non_exhaustive()
    }
}

impl Dispatcher {
    pub fn new(op: Arc<Operator>, log: Option<RequestLog>) -> Self {
        Self {
            op,
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(5))
                .no_proxy()
                .build()
                .expect("static client configuration"),
            log,
            running: Arc::new(Mutex::new(())),
            wake: Arc::new(Notify::new()),
        }
    }

    /// Asks the background loop, if any, to flush now.
    pub fn wake(&self) {
        self.wake.notify_one();
    }

    /// One pass over the outbox. A failed delivery holds back later events
    /// for the same target until the next pass.
    pub async fn flush(&self) -> DispatchSummary {
        let _guard = self.running.lock().await;
        let mut summary = DispatchSummary::default();
        let mut blocked = BTreeSet::new();
        for d in self.op.pending_deliveries() {
            if blocked.contains(&d.target) {
                summary.deferred += 1;
                continue;
            }
            let label = self.log.as_ref().map(|l| l.label(d.target.as_str()));
            if let (Some(log), Some(label)) = (&self.log, &label) {
                log.record(OPERATOR, label, NOTICE);
            }
            let url = format!("{}/notices", d.endpoint.trim_end_matches('/'));
            let ok = match self.http.post(&url).json(&d.event).send().await {
                Ok(r) => r.status().is_success(),
                Err(e) => {
                    tracing::warn!("notice {} to {}: {e}", d.event.event_id, d.target);
                    false
                }
            };
            if ok {
                if let (Some(log), Some(label)) = (&self.log, &label) {
                    log.record(label, OPERATOR, NOTICE_ACK);
                }
                summary.delivered += 1;
                let _ = self.op.mark_delivered(d.seq);
            } else {
                summary.failed += 1;
                let _ = self.op.mark_failed(d.seq);
                blocked.insert(d.target.clone());
            }
        }
        summary
    }

    /// Flushes whenever woken and at least every `retry`.
    pub fn spawn_loop(&self, retry: Duration) -> JoinHandle<()> {
        let this = self.clone();
        tokio::spawn(async move {
            loop {
                tokio::select! {
                    _ = this.wake.notified() => {}
                    _ = tokio::time::sleep(retry) => {}
                }
                let s = this.flush().await;
                if s.failed > 0 {
                    tracing::debug!(?s, "notice delivery incomplete");
                }
            }
        })
    }
}

#[derive(Clone)]
struct AppState {
    op: Arc<Operator>,
    dispatcher: Dispatcher,
}

type JsonBody<T> = std::result::Result<Json<T>, JsonRejection>;

/// CORS for a browser front end served from `origins`. Credentials travel
/// in the Authorization header, never in cookies.
pub fn cors(origins: &[String]) -> Result<CorsLayer> {
    let origins = origins
        .iter()
        .map(|o| {
            HeaderValue::from_str(o).map_err(|_| Error::InvalidArgument(format!("bad origin {o}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]))
}

pub fn operator_router(op: Arc<Operator>, dispatcher: Dispatcher) -> Router {
    Router::new()
        .route("/.well-known/priaas-operator", get(info))
        .route("/registry/services", post(register).get(list_services))
        .route("/registry/services/:id", get(lookup_service))
        .route("/accounts", post(create_account))
        .route("/accounts/import", post(import))
        .route("/accounts/:id", delete(delete_account))
        .route("/accounts/:id/links", post(link).get(links))
        .route("/accounts/:id/consents", post(grant).get(list_consents))
        .route("/accounts/:id/consents/:cid/status", post(set_status))
        .route("/accounts/:id/consents/:cid/receipt", get(receipt))
        .route("/accounts/:id/export", get(export))
        .route("/introspect", post(introspect))
        .with_state(AppState { op, dispatcher })
}

fn account(state: &AppState, headers: &HeaderMap, id: String) -> Result<AccountId> {
    let credential =
        bearer(headers).ok_or_else(|| Error::Forbidden("missing credential".into()))?;
    let id = AccountId(id);
    state.op.authenticate_account(&id, credential)?;
    Ok(id)
}

async fn info(State(s): State<AppState>) -> Json<OperatorInfo> {
    Json(s.op.info())
}

async fn register(
    State(s): State<AppState>,
    body: JsonBody<ServiceRegistration>,
) -> ApiResult<(StatusCode, Json<RegisteredService>)> {
    let Json(registration) = body?;
    Ok((
        StatusCode::CREATED,
        Json(s.op.register_service(registration)?),
    ))
}

async fn list_services(State(s): State<AppState>) -> Json<Vec<RegistryEntry>> {
    Json(s.op.list_services())
}

async fn lookup_service(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<RegistryEntry>> {
    Ok(Json(s.op.lookup_service(&ServiceId(id))?))
}

async fn create_account(
    State(s): State<AppState>,
    body: JsonBody<CreateAccount>,
) -> ApiResult<(StatusCode, Json<CreatedAccount>)> {
    let Json(req) = body?;
    let account_id = s.op.create_account(&req.display_name, &req.credential)?;
    Ok((StatusCode::CREATED, Json(CreatedAccount { account_id })))
}

async fn link(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: JsonBody<LinkRequest>,
) -> ApiResult<(StatusCode, Json<ServiceLink>)> {
    let account = account(&s, &headers, id)?;
    let Json(req) = body?;
    Ok((
        StatusCode::CREATED,
        Json(s.op.link_service(&account, &req.service_id)?),
    ))
}

async fn links(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<ServiceLink>>> {
    let account = account(&s, &headers, id)?;
    Ok(Json(s.op.list_links(&account)))
}

async fn grant(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: JsonBody<GrantRequest>,
) -> ApiResult<(StatusCode, Json<Grant>)> {
    let account = account(&s, &headers, id)?;
    let Json(req) = body?;
    let grant = s.op.grant_consent(&account, req)?;
    s.dispatcher.wake();
    Ok((StatusCode::CREATED, Json(grant)))
}

async fn list_consents(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<ConsentView>>> {
    let account = account(&s, &headers, id)?;
    Ok(Json(s.op.list_consents(&account)?))
}

async fn set_status(
    State(s): State<AppState>,
    Path((id, cid)): Path<(String, String)>,
    headers: HeaderMap,
    body: JsonBody<StatusRequest>,
) -> ApiResult<Json<ConsentRecord>> {
    let account = account(&s, &headers, id)?;
    let Json(req) = body?;
    let record =
        s.op.set_consent_status(&account, &ConsentId(cid), req.action)?;
    s.dispatcher.wake();
    Ok(Json(record))
}

async fn receipt(
    State(s): State<AppState>,
    Path((id, cid)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Json<ConsentReceipt>> {
    let account = account(&s, &headers, id)?;
    Ok(Json(s.op.receipt(&account, &ConsentId(cid))?))
}

async fn export(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<PortableAccountDocument>> {
    let account = account(&s, &headers, id)?;
    Ok(Json(s.op.export_account(&account)?))
}

async fn import(
    State(s): State<AppState>,
    body: JsonBody<ImportRequest>,
) -> ApiResult<(StatusCode, Json<ImportResult>)> {
    let Json(req) = body?;
    let result = s.op.import_account(&req.document, &req.credential)?;
    s.dispatcher.wake();
    Ok((StatusCode::CREATED, Json(result)))
}

/// Erases the account, pushes the erasure notices once and reports which
/// services acknowledged them.
async fn delete_account(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<ErasureReport>> {
    let account = account(&s, &headers, id)?;
    let mut report = s.op.delete_account(&account)?;
    s.dispatcher.flush().await;
    s.op.refresh_erasure_report(&mut report);
    Ok(Json(report))
}

async fn introspect(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: JsonBody<IntrospectRequest>,
) -> ApiResult<Json<Introspection>> {
    let (service_id, secret) = bearer(&headers)
        .and_then(|b| b.split_once(':'))
        .ok_or_else(|| Error::Forbidden("service credential required".into()))?;
    let Json(req) = body?;
    Ok(Json(s.op.introspect(
        &ServiceId(service_id.into()),
        secret,
        &req,
    )?))
}

/// The operator API on a listener, with its dispatcher.
#[derive(Debug)]
pub struct OperatorServer {
    pub operator: Arc<Operator>,
    pub dispatcher: Dispatcher,
    server: Option<Server>,
    retry: Option<JoinHandle<()>>,
}

impl OperatorServer {
    pub fn start(
        operator: Arc<Operator>,
        listener: TcpListener,
        log: Option<RequestLog>,
    ) -> Result<Self> {
        Self::start_with(operator, listener, log, &[])
    }

    pub fn start_with(
        operator: Arc<Operator>,
        listener: TcpListener,
        log: Option<RequestLog>,
        allowed_origins: &[String],
    ) -> Result<Self> {
        let dispatcher = Dispatcher::new(operator.clone(), log);
        let mut router = operator_router(operator.clone(), dispatcher.clone());
        if !allowed_origins.is_empty() {
            router = router.layer(cors(allowed_origins)?);
        }
        Ok(Self {
            operator,
            dispatcher,
            server: Some(serve(listener, router)?),
            retry: None,
        })
    }

    /// Delivers notices in the background instead of only on demand.
    pub fn with_background_delivery(mut self, retry: Duration) -> Self {
        self.retry = Some(self.dispatcher.spawn_loop(retry));
        self
    }

    pub fn url(&self) -> String {
        self.server.as_ref().map(Server::url).unwrap_or_default()
    }

    pub async fn shutdown(mut self) {
        if let Some(task) = self.retry.take() {
            task.abort();
        }
        if let Some(server) = self.server.take() {
            server.shutdown().await;
        }
    }
}

impl Drop for OperatorServer {
    fn drop(&mut self) {
        if let Some(task) = self.retry.take() {
            task.abort();
        }
    }
}
