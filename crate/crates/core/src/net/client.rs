//! HTTP clients for the operator API and the data services.

use std::time::Duration;

use reqwest::{RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::log::RequestLog;
use super::operator::{CreateAccount, CreatedAccount, ImportRequest, LinkRequest, StatusRequest};
use super::services::{AppFetch, PullReport, PullRequest, SyncRequest};
use super::{ErrorBody, RangeQuery};
use crate::consent::token::decode_unverified;
use crate::consent::{ConsentAction, ConsentReceipt, ConsentRecord, ServiceLink, TimeRange};
use crate::datakit::{parse_data_page, DataPage, IngestReport, Observation};
use crate::error::{Error, Result};
use crate::flowsim::kinds::*;
use crate::flowsim::OPERATOR;
use crate::ids::{AccountId, ConsentId, ServiceId};
use crate::operator::{
    ConsentView, ErasureReport, Grant, GrantRequest, ImportResult, IntrospectRequest,
    Introspection, NotificationEvent, OperatorInfo, PortableAccountDocument, RegisteredService,
    RegistryEntry, ServiceRegistration,
};
use crate::reasoner::service::{InferenceResponse, IngestBatch, IngestReceipt};

const TIMEOUT: Duration = Duration::from_secs(10);

fn http() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(TIMEOUT)
        .no_proxy()
        .build()
        .expect("static client configuration")
}

/// Kinds logged around one call: request, response, and the kind used when
/// the peer answers with an error.
#[derive(Clone, Copy)]
struct Kinds(&'static str, &'static str, &'static str);

fn decode_error(status: StatusCode, body: &[u8]) -> Error {
    match serde_json::from_slice::<ErrorBody>(body) {
        Ok(e) => Error::from_code(&e.error_code, e.message),
        Err(_) if status == StatusCode::NOT_FOUND => Error::NotFound("no such endpoint".into()),
        Err(_) => Error::RetryableIo(format!(
            "HTTP {status}: {}",
            String::from_utf8_lossy(body)
                .chars()
                .take(200)
                .collect::<String>()
        )),
    }
}

/// Sends, logs and decodes one call.
async fn exchange(
    request: RequestBuilder,
    log: Option<(&RequestLog, &str, &str)>,
    kinds: Option<Kinds>,
) -> Result<Vec<u8>> {
    if let (Some((log, from, to)), Some(k)) = (log, kinds) {
        log.record(from, to, k.0);
    }
    let response = request
        .send()
        .await
        .map_err(|e| Error::RetryableIo(e.to_string()))?;
    let status = response.status();
    let body = response
        .bytes()
        .await
        .map_err(|e| Error::RetryableIo(e.to_string()))?;
    let ok = status.is_success();
    if let (Some((log, from, to)), Some(k)) = (log, kinds) {
        log.record(to, from, if ok { k.1 } else { k.2 });
    }
    if ok {
        Ok(body.to_vec())
    } else {
        Err(decode_error(status, &body))
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body)
        .map_err(|e| Error::RetryableIo(format!("unexpected response: {e}")))
}

fn range_params(range: Option<&TimeRange>, cursor: Option<&str>) -> RangeQuery {
    RangeQuery {
        from: range.map(|r| r.start),
        to: range.map(|r| r.end),
        cursor: cursor.map(str::to_string),
    }
}

/// Client for the operator REST API, acting as one named party.
#[derive(Debug, Clone)]
pub struct OperatorClient {
    base: String,
    http: reqwest::Client,
    party: String,
    log: Option<RequestLog>,
}

impl OperatorClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: http(),
            party: "client".into(),
            log: None,
        }
    }

    pub fn with_log(mut self, log: RequestLog) -> Self {
        self.log = Some(log);
        self
    }

    /// The same client, logging as `party`.
    pub fn as_party(&self, party: impl Into<String>) -> Self {
        Self {
            party: party.into(),
            ..self.clone()
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn call<T: DeserializeOwned>(
        &self,
        request: RequestBuilder,
        kinds: Option<Kinds>,
    ) -> Result<T> {
        let log = self
            .log
            .as_ref()
            .map(|l| (l, self.party.as_str(), OPERATOR));
        parse(&exchange(request, log, kinds).await?)
    }

    pub async fn info(&self) -> Result<OperatorInfo> {
        self.call(
            self.http.get(self.url("/.well-known/priaas-operator")),
            None,
        )
        .await
    }

    pub async fn register_service(
        &self,
        registration: &ServiceRegistration,
    ) -> Result<RegisteredService> {
        let request = self
            .http
            .post(self.url("/registry/services"))
            .json(registration);
        self.call(
            request,
            Some(Kinds(REGISTER_REQUEST, REGISTER_RESPONSE, ERROR_RESPONSE)),
        )
        .await
    }

    pub async fn lookup_service(&self, service_id: &ServiceId) -> Result<RegistryEntry> {
        self.call(
            self.http
                .get(self.url(&format!("/registry/services/{service_id}"))),
            None,
        )
        .await
    }

    pub async fn list_services(&self) -> Result<Vec<RegistryEntry>> {
        self.call(self.http.get(self.url("/registry/services")), None)
            .await
    }

    pub async fn create_account(&self, display_name: &str, credential: &str) -> Result<AccountId> {
        let body = CreateAccount {
            display_name: display_name.into(),
            credential: credential.into(),
        };
        let request = self.http.post(self.url("/accounts")).json(&body);
        let created: CreatedAccount = self
            .call(
                request,
                Some(Kinds(ACCOUNT_REQUEST, ACCOUNT_RESPONSE, ERROR_RESPONSE)),
            )
            .await?;
        Ok(created.account_id)
    }

    pub async fn link(
        &self,
        account: &AccountId,
        credential: &str,
        service_id: &ServiceId,
    ) -> Result<ServiceLink> {
        let request = self
            .http
            .post(self.url(&format!("/accounts/{account}/links")))
            .bearer_auth(credential)
            .json(&LinkRequest {
                service_id: service_id.clone(),
            });
        self.call(
            request,
            Some(Kinds(LINK_REQUEST, LINK_RESPONSE, ERROR_RESPONSE)),
        )
        .await
    }

    pub async fn links(&self, account: &AccountId, credential: &str) -> Result<Vec<ServiceLink>> {
        let request = self
            .http
            .get(self.url(&format!("/accounts/{account}/links")))
            .bearer_auth(credential);
        self.call(request, None).await
    }

    pub async fn grant(
        &self,
        account: &AccountId,
        credential: &str,
        grant: &GrantRequest,
    ) -> Result<Grant> {
        let request = self
            .http
            .post(self.url(&format!("/accounts/{account}/consents")))
            .bearer_auth(credential)
            .json(grant);
        self.call(
            request,
            Some(Kinds(GRANT_REQUEST, GRANT_RESPONSE, ERROR_RESPONSE)),
        )
        .await
    }

    pub async fn set_status(
        &self,
        account: &AccountId,
        credential: &str,
        consent_id: &ConsentId,
        action: ConsentAction,
    ) -> Result<ConsentRecord> {
        let request = self
            .http
            .post(self.url(&format!("/accounts/{account}/consents/{consent_id}/status")))
            .bearer_auth(credential)
            .json(&StatusRequest { action });
        self.call(
            request,
            Some(Kinds(STATUS_REQUEST, STATUS_RESPONSE, ERROR_RESPONSE)),
        )
        .await
    }

    pub async fn list_consents(
        &self,
        account: &AccountId,
        credential: &str,
    ) -> Result<Vec<ConsentView>> {
        let request = self
            .http
            .get(self.url(&format!("/accounts/{account}/consents")))
            .bearer_auth(credential);
        self.call(request, None).await
    }

    pub async fn receipt(
        &self,
        account: &AccountId,
        credential: &str,
        consent_id: &ConsentId,
    ) -> Result<ConsentReceipt> {
        let request = self
            .http
            .get(self.url(&format!(
                "/accounts/{account}/consents/{consent_id}/receipt"
            )))
            .bearer_auth(credential);
        self.call(request, None).await
    }

    pub async fn introspect(
        &self,
        service_id: &ServiceId,
        secret: &str,
        body: &IntrospectRequest,
    ) -> Result<Introspection> {
        let request = self
            .http
            .post(self.url("/introspect"))
            .bearer_auth(format!("{service_id}:{secret}"))
            .json(body);
        self.call(
            request,
            Some(Kinds(
                INTROSPECT_REQUEST,
                INTROSPECT_RESPONSE,
                INTROSPECT_RESPONSE,
            )),
        )
        .await
    }

    pub async fn export(
        &self,
        account: &AccountId,
        credential: &str,
    ) -> Result<PortableAccountDocument> {
        let request = self
            .http
            .get(self.url(&format!("/accounts/{account}/export")))
            .bearer_auth(credential);
        self.call(request, None).await
    }

    pub async fn import(
        &self,
        document: &PortableAccountDocument,
        credential: &str,
    ) -> Result<ImportResult> {
        let request = self
            .http
            .post(self.url("/accounts/import"))
            .json(&ImportRequest {
                document: document.clone(),
                credential: credential.into(),
            });
        self.call(request, None).await
    }

    pub async fn delete_account(
        &self,
        account: &AccountId,
        credential: &str,
    ) -> Result<ErasureReport> {
        let request = self
            .http
            .delete(self.url(&format!("/accounts/{account}")))
            .bearer_auth(credential);
        self.call(request, None).await
    }
}

/// Client for a source, reasoner or app, acting as one named party.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    http: reqwest::Client,
    party: String,
    peer: String,
    log: Option<RequestLog>,
    admin_token: Option<String>,
}

impl ServiceClient {
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Self {
            peer: base.clone(),
            base,
            http: http(),
            party: "client".into(),
            log: None,
            admin_token: None,
        }
    }

    /// Logs calls as going from `party` to `peer`.
    pub fn with_log(
        mut self,
        log: RequestLog,
        party: impl Into<String>,
        peer: impl Into<String>,
    ) -> Self {
        self.log = Some(log);
        self.party = party.into();
        self.peer = peer.into();
        self
    }

    pub fn with_admin_token(mut self, token: Option<String>) -> Self {
        self.admin_token = token;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send(&self, request: RequestBuilder, kinds: Option<Kinds>) -> Result<Vec<u8>> {
        let log = self
            .log
            .as_ref()
            .map(|l| (l, self.party.as_str(), self.peer.as_str()));
        exchange(request, log, kinds).await
    }

    fn admin(&self, request: RequestBuilder) -> RequestBuilder {
        match &self.admin_token {
            Some(t) => request.bearer_auth(t),
            None => request,
        }
    }

    /// One page of `GET /data/{resource_type}`; every observation is
    /// validated before the page is accepted.
    pub async fn data_page(
        &self,
        token: &str,
        resource_type: &str,
        range: Option<&TimeRange>,
        cursor: Option<&str>,
    ) -> Result<DataPage> {
        let request = self
            .http
            .get(self.url(&format!("/data/{resource_type}")))
            .bearer_auth(token)
            .query(&range_params(range, cursor));
        let body = self
            .send(
                request,
                Some(Kinds(DATA_REQUEST, DATA_RESPONSE, ERROR_RESPONSE)),
            )
            .await?;
        let expected = decode_unverified(token.as_bytes())
            .ok()
            .map(|(c, _, _)| c.pseudonym);
        parse_data_page(&body, expected.as_ref())
    }

    /// Follows continuation cursors until the last page.
    pub async fn fetch_all(
        &self,
        token: &str,
        resource_type: &str,
        range: Option<&TimeRange>,
    ) -> Result<Vec<Observation>> {
        let mut out = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let page = self
                .data_page(token, resource_type, range, cursor.as_deref())
                .await?;
            if page.resource_type.as_str() != resource_type {
                return Err(Error::Validation(
                    "response is for another resource type".into(),
                ));
            }
            out.extend(page.observations);
            match page.next_cursor {
                Some(next) => cursor = Some(next),
                None => return Ok(out),
            }
        }
    }

    /// `GET /recommendations` or `GET /facts` at a reasoner.
    pub async fn inference(
        &self,
        token: &str,
        resource_type: &str,
        range: Option<&TimeRange>,
    ) -> Result<InferenceResponse> {
        let request = self
            .http
            .get(self.url(&format!("/{resource_type}")))
            .bearer_auth(token)
            .query(&range_params(range, None));
        let body = self
            .send(
                request,
                Some(Kinds(
                    RECOMMENDATIONS_REQUEST,
                    RECOMMENDATIONS_RESPONSE,
                    ERROR_RESPONSE,
                )),
            )
            .await?;
        parse(&body)
    }

    pub async fn rules(&self) -> Result<Value> {
        parse(&self.send(self.http.get(self.url("/rules")), None).await?)
    }

    pub async fn notice(&self, event: &NotificationEvent) -> Result<Value> {
        let request = self.http.post(self.url("/notices")).json(event);
        parse(&self.send(request, None).await?)
    }

    pub async fn ingest(&self, batch: &IngestBatch) -> Result<IngestReceipt> {
        let request = self.http.post(self.url("/ingest")).json(batch);
        parse(&self.send(request, None).await?)
    }

    pub async fn sync(&self, body: &SyncRequest) -> Result<IngestReport> {
        self.admin_post("/admin/sync", body).await
    }

    pub async fn pull(&self, body: &PullRequest) -> Result<PullReport> {
        self.admin_post("/admin/pull", body).await
    }

    pub async fn app_fetch(&self, body: &AppFetch) -> Result<InferenceResponse> {
        self.admin_post("/admin/fetch", body).await
    }

    pub async fn received(&self) -> Result<Vec<InferenceResponse>> {
        let request = self.admin(self.http.get(self.url("/admin/received")));
        parse(&self.send(request, None).await?)
    }

    pub async fn state(&self) -> Result<Value> {
        let request = self.admin(self.http.get(self.url("/admin/state")));
        parse(&self.send(request, None).await?)
    }

    async fn admin_post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T> {
        let request = self.admin(self.http.post(self.url(path)).json(body));
        parse(&self.send(request, None).await?)
    }
}
