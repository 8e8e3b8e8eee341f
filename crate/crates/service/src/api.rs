use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use roboguard_core::policy::{ConfigError, Role};
use roboguard_core::PolicyConfig;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::live::{LiveError, LiveHandle};
use crate::model::Timestamp;
use crate::store::Store;

/// Header carrying the caller's role for policy changes.
pub const ROLE_HEADER: &str = "x-role";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub live: LiveHandle,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cns", get(list_cns))
        .route("/cns/{id}", get(get_cn))
        .route("/cns/{id}/policy", put(set_policy))
        .route("/violations", get(get_violations))
        .route("/stream", get(stream))
        .route("/status", get(status))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Config(ConfigError),
    Unavailable,
}

impl From<LiveError> for ApiError {
    fn from(e: LiveError) -> Self {
        match e {
            LiveError::Config(c) => ApiError::Config(c),
            LiveError::Stopped => ApiError::Unavailable,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error, message) = match self {
            ApiError::NotFound(id) => (
                StatusCode::NOT_FOUND,
                "unknown_cn",
                format!("unknown coordination node {id}"),
            ),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
            ApiError::Unavailable => (
                StatusCode::SERVICE_UNAVAILABLE,
                "unavailable",
                "simulation thread has stopped".into(),
            ),
            ApiError::Config(e) => {
                let (status, tag) = match &e {
                    ConfigError::UnknownCn { .. } => (StatusCode::NOT_FOUND, "unknown_cn"),
                    ConfigError::RoleViolation { .. } => (StatusCode::FORBIDDEN, "role_violation"),
                    ConfigError::MandatoryPolicy { .. } => (StatusCode::FORBIDDEN, "mandatory_policy"),
                    ConfigError::InvalidPolicyForCnType { .. } => {
                        (StatusCode::UNPROCESSABLE_ENTITY, "invalid_policy_for_cn_type")
                    }
                    ConfigError::InvalidParams { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_params"),
                };
                (status, tag, e.to_string())
            }
        };
        (status, Json(ErrorBody { error, message })).into_response()
    }
}

async fn list_cns(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.store.models())
}

async fn get_cn(State(s): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    s.store.model(&id).map(Json).ok_or(ApiError::NotFound(id))
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    since: Option<String>,
}

fn parse_since(q: &SinceQuery) -> Result<Option<Timestamp>, ApiError> {
    q.since
        .as_deref()
        .map(|s| {
            s.parse::<Timestamp>()
                .map_err(|e| ApiError::BadRequest(format!("since must be ISO-8601: {e}")))
        })
        .transpose()
}

async fn get_violations(State(s): State<AppState>, Query(q): Query<SinceQuery>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.store.violations_since(parse_since(&q)?)))
}

/// Callers without a role header are treated as end users.
fn role_of(headers: &HeaderMap) -> Result<Role, ApiError> {
    match headers.get(ROLE_HEADER) {
        None => Ok(Role::EndUser),
        Some(v) => v
            .to_str()
            .map_err(|_| ApiError::BadRequest("x-role is not text".into()))?
            .parse()
            .map_err(ApiError::BadRequest),
    }
}

async fn set_policy(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(config): Json<PolicyConfig>,
) -> Result<impl IntoResponse, ApiError> {
    let role = role_of(&headers)?;
    let ack = s.live.configure(&id, config, role).await?;
    Ok(Json(ack))
}

async fn status(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.live.status())
}

/// Server-sent violations. With `since`, the matching backlog is replayed
/// first; each event's id is the record index so clients can dedupe.
async fn stream(
    State(s): State<AppState>,
    Query(q): Query<SinceQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let (backlog, rx) = s.store.subscribe(parse_since(&q)?);
    let floor = backlog.last().map(|v| v.index);
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(v) => return Some((v, rx)),
                Err(RecvError::Lagged(n)) => tracing::warn!(skipped = n, "slow stream subscriber"),
                Err(RecvError::Closed) => return None,
            }
        }
    })
    .filter(move |v| futures::future::ready(floor.is_none_or(|f| v.index > f)));
    let events = stream::iter(backlog).chain(live).map(|v| {
        Ok(Event::default()
            .event("violation")
            .id(v.index.to_string())
            .json_data(&v)
            .expect("violation serializes"))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
