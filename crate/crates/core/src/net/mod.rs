//! HTTP transport for the operator and the reference services.
//!
//! Handlers are thin: they parse, authenticate and call the same types the
//! simulator drives over its in-memory bus. Every endpoint answers errors as
//! `{"error_code", "message"}` with the status fixed per code.

use std::net::SocketAddr;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::consent::TimeRange;
use crate::error::{Error, Result};

pub mod client;
pub mod live;
pub mod log;
pub mod operator;
pub mod services;

pub use client::{OperatorClient, ServiceClient};
pub use live::{run_live, LiveFailure, LiveRun, LiveRunner, StepRecord};
pub use log::{LoggedMessage, RequestLog};
pub use operator::{operator_router, Dispatcher, OperatorServer};
pub use services::{AppService, ReasonerHttp, ServiceContext, SourceService};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

/// An [`Error`] on its way out of a handler.
#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(Error::InvalidArgument(e.body_text()))
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(Error::InvalidArgument(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody {
            error_code: self.0.code().to_string(),
            message: self.0.message(),
        };
        (status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

/// The credential after `Bearer `, if any.
pub(crate) fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// `from`/`to` bounds and a page cursor from a query string.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RangeQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor: Option<String>,
}

impl RangeQuery {
    pub fn time_range(&self) -> Result<Option<TimeRange>> {
        match (self.from, self.to) {
            (Some(start), Some(end)) => TimeRange::new(start, end).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::InvalidArgument("from and to go together".into())),
        }
    }
}

/// A running HTTP server on a loopback port.
#[derive(Debug)]
pub struct Server {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl Server {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for the server task to end.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| Error::RetryableIo(format!("bind {addr}: {e}")))
}

pub fn local_url(listener: &TcpListener) -> Result<String> {
    let addr = listener
        .local_addr()
        .map_err(|e| Error::RetryableIo(e.to_string()))?;
    Ok(format!("http://{addr}"))
}

pub fn serve(listener: TcpListener, router: Router) -> Result<Server> {
    let addr = listener
        .local_addr()
        .map_err(|e| Error::RetryableIo(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!("server on {addr} stopped: {e}");
        }
    });
    Ok(Server {
        addr,
        shutdown: Some(tx),
        task: Some(task),
    })
}
