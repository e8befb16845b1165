//! Axum routes over [`Service`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use super::service::{ApiError, Service};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = json!({"error": self.code(), "message": self.to_string()});
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<Service>>;

async fn mood(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    Ok(Json(s.submit_mood(&body)?).into_response())
}

async fn recommendations(
    State(s): Shared,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let recs = s.recommendations(q.get("user_id").map(String::as_str), q.get("k").map(String::as_str))?;
    Ok(Json(recs).into_response())
}

async fn feedback(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    Ok(Json(s.feedback(&body)?).into_response())
}

async fn verify(State(s): Shared) -> Result<Response, ApiError> {
    Ok(Json(s.verify_ledger()?).into_response())
}

async fn metrics(State(s): Shared) -> Response {
    Json(s.request_metrics()).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/mood", post(mood))
        .route("/recommendations", get(recommendations))
        .route("/feedback", post(feedback))
        .route("/ledger/verify", get(verify))
        .route("/metrics/requests", get(metrics))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<Service>) -> std::io::Result<()> {
    let addr = format!("{}:{}", service.config().host, service.config().port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, service, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    service: Arc<Service>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}
