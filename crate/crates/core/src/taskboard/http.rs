//! JSON over HTTP for the worker console.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::{MacroAction, TaskApi, TaskError, TaskOutput, Tier};

type Api = Arc<dyn TaskApi>;

impl IntoResponse for TaskError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({ "error": self, "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub tier: Tier,
    pub worker: String,
}

#[derive(Debug, Deserialize)]
pub struct SubmitBody {
    pub worker: String,
    pub output: TaskOutput,
}

#[derive(Debug, Deserialize)]
pub struct WorkerBody {
    pub worker: String,
}

#[derive(Debug, Deserialize)]
pub struct MacroBody {
    pub worker: String,
    pub action: MacroAction,
}

async fn next(State(api): State<Api>, Query(q): Query<NextQuery>) -> Result<Response, TaskError> {
    Ok(match api.claim_next(&q.worker, q.tier)? {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(api): State<Api>, Path(id): Path<String>, Json(b): Json<SubmitBody>) -> Result<Response, TaskError> {
    Ok(Json(api.submit(&id, &b.worker, b.output)?).into_response())
}

async fn cant_answer(State(api): State<Api>, Path(id): Path<String>, Json(b): Json<WorkerBody>) -> Result<Response, TaskError> {
    Ok(Json(api.cant_answer(&id, &b.worker)?).into_response())
}

async fn macro_action(State(api): State<Api>, Path(id): Path<String>, Json(b): Json<MacroBody>) -> Result<Response, TaskError> {
    Ok(Json(api.macro_action(&id, &b.worker, b.action)?).into_response())
}

async fn show(State(api): State<Api>, Path(id): Path<String>) -> Result<Response, TaskError> {
    Ok(Json(api.get(&id)?).into_response())
}

pub fn router(api: Api) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next))
        .route("/api/tasks/{id}", get(show))
        .route("/api/tasks/{id}/submit", post(submit))
        .route("/api/tasks/{id}/cant-answer", post(cant_answer))
        .route("/api/tasks/{id}/macro-action", post(macro_action))
        .with_state(api)
}

/// Binds and serves until the process receives Ctrl-C.
pub async fn serve(api: Api, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(api))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
