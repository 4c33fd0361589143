//! JSON-over-HTTP recommendation endpoint.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Result;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gcm::serving::{recommend, Recommendation, ServingBundle};
use gcm::GcmError;
use log::{error, info};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub user: String,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
    #[serde(default = "default_k")]
    pub k: i64,
}

fn default_k() -> i64 {
    10
}

#[derive(Debug, Clone, Serialize)]
pub struct Answer {
    pub items: Vec<Recommendation>,
    pub latency_ms: f64,
}

pub fn answer(bundle: &ServingBundle, q: &Query) -> gcm::Result<Answer> {
    let t = Instant::now();
    let items = recommend(bundle, &q.user, &q.context, q.k)?;
    Ok(Answer {
        items,
        latency_ms: t.elapsed().as_secs_f64() * 1e3,
    })
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

fn status_of(e: &GcmError) -> StatusCode {
    match e {
        GcmError::UnknownUser(_) | GcmError::UnknownItem(_) => StatusCode::NOT_FOUND,
        GcmError::Param(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn recommend_handler(State(bundle): State<Arc<ServingBundle>>, body: Bytes) -> Response {
    let q: Query = match serde_json::from_slice(&body) {
        Ok(q) => q,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    match answer(&bundle, &q) {
        Ok(a) => Json(a).into_response(),
        Err(e) => {
            let status = status_of(&e);
            if status.is_server_error() {
                error!("request for user {} failed: {e}", q.user);
            }
            error_response(status, e.to_string())
        }
    }
}

async fn health(State(bundle): State<Arc<ServingBundle>>) -> Response {
    Json(json!({ "status": "ok", "run_id": bundle.run_id() })).into_response()
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "no such route".into())
}

pub fn router(bundle: Arc<ServingBundle>) -> Router {
    Router::new()
        .route("/recommend", post(recommend_handler))
        .route("/health", get(health))
        .fallback(not_found)
        .with_state(bundle)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
    info!("shutting down");
}

/// Serves until ctrl-c or SIGTERM. Prints the bound address on stdout once listening.
pub fn serve(bundle: ServingBundle, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        info!("serving run {} on {local}", bundle.run_id());
        println!("listening on http://{local}");
        let app = router(Arc::new(bundle));
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        Ok(())
    })
}
