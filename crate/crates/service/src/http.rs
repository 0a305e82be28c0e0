use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::session::{AnswerOutcome, CreateRequest, Created, NextQuestion, SessionManager, SessionView};

type Shared = Arc<SessionManager>;

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/answer", post(answer))
        .with_state(manager)
}

/// Loads the checkpoint, replays the answer log and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let manager = Arc::new(SessionManager::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|e| ServiceError::Startup(format!("bind {}: {e}", cfg.bind)))?;
    tracing::info!(
        "serving {} questions ({} policy) on {}",
        manager.num_questions(),
        manager.default_policy(),
        cfg.bind
    );
    let sweeper = Arc::clone(&manager);
    let period = Duration::from_secs(cfg.session_ttl_secs.clamp(1, 60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sweeper.purge_expired();
            if n > 0 {
                tracing::info!("expired {n} idle sessions");
            }
        }
    });
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}

async fn healthz(State(m): State<Shared>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "num_questions": m.num_questions(),
        "policy": m.default_policy(),
        "ability_kind": m.ability_kind(),
        "sessions": m.session_count(),
    }))
}

async fn create(State(m): State<Shared>, body: Bytes) -> Result<Json<Created>, ServiceError> {
    let req = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::Validation(format!("invalid request body: {e}")))?
    };
    Ok(Json(m.create_session(req)?))
}

async fn next(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<NextQuestion>, ServiceError> {
    Ok(Json(m.next_question(&id)?))
}

async fn state(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(m.get_state(&id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    question_id: Value,
    correct: Value,
}

async fn answer(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<AnswerOutcome>, ServiceError> {
    let body: AnswerBody =
        serde_json::from_slice(&body).map_err(|e| ServiceError::Validation(format!("invalid answer body: {e}")))?;
    let question_id = match &body.question_id {
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_u64() => n.to_string(),
        other => return Err(ServiceError::Validation(format!("question_id must be a string, got {other}"))),
    };
    let correct = match &body.correct {
        Value::Bool(b) => *b,
        Value::Number(n) if n.as_u64() == Some(1) => true,
        Value::Number(n) if n.as_u64() == Some(0) => false,
        other => return Err(ServiceError::Validation(format!("correct must be binary, got {other}"))),
    };
    Ok(Json(m.submit_answer(&id, &question_id, correct)?))
}
