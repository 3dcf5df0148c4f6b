//! Stateless JSON service over a frozen model, bank and skeleton.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use morphik::shape_inversion::ShapeBank;

use crate::api::{self, ApiError, ApiResult, Artifacts, Envelope};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_REQUEST_LIMIT: usize = 1 << 20;

/// Service settings as read from a config file; every field may be
/// overridden from the command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfigFile {
    pub bind: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub skeleton: Option<PathBuf>,
    pub request_limit: Option<usize>,
    pub log_level: Option<String>,
}

impl ServiceConfigFile {
    /// Fields set in `over` win.
    pub fn merge(self, over: ServiceConfigFile) -> Self {
        Self {
            bind: over.bind.or(self.bind),
            checkpoint: over.checkpoint.or(self.checkpoint),
            bank: over.bank.or(self.bank),
            skeleton: over.skeleton.or(self.skeleton),
            request_limit: over.request_limit.or(self.request_limit),
            log_level: over.log_level.or(self.log_level),
        }
    }

    pub fn resolve(self) -> ApiResult<ServiceConfig> {
        let missing = |f: &str| ApiError::new(422, "invalid_config", format!("`{f}` is required")).at(f);
        let request_limit = self.request_limit.unwrap_or(DEFAULT_REQUEST_LIMIT);
        if request_limit == 0 {
            return Err(ApiError::new(422, "invalid_config", "request_limit must be positive").at("request_limit"));
        }
        Ok(ServiceConfig {
            bind: self.bind.unwrap_or_else(|| DEFAULT_BIND.to_string()),
            checkpoint: self.checkpoint.ok_or_else(|| missing("checkpoint"))?,
            bank: self.bank.ok_or_else(|| missing("bank"))?,
            skeleton: self.skeleton,
            request_limit,
            log_level: self.log_level.unwrap_or_else(|| "info".to_string()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub checkpoint: PathBuf,
    pub bank: PathBuf,
    /// Bundled skeleton when absent.
    pub skeleton: Option<PathBuf>,
    /// Bytes.
    pub request_limit: usize,
    pub log_level: String,
}

pub struct ServiceState {
    pub artifacts: Artifacts,
    pub bank: ShapeBank,
}

impl ServiceState {
    pub fn load(config: &ServiceConfig) -> ApiResult<Self> {
        let artifacts = Artifacts::load(&config.checkpoint, config.skeleton.as_deref())?;
        let bank = api::load_bank(&config.bank, &artifacts.template)?;
        Ok(Self { artifacts, bank })
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    checkpoint_hash: &'a str,
    error: &'a ApiError,
}

fn error_response(state: &ServiceState, e: &ApiError) -> Response {
    let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = ErrorBody {
        checkpoint_hash: &state.artifacts.checkpoint_hash,
        error: e,
    };
    (status, Json(body)).into_response()
}

fn ok_response<T: Serialize>(state: &ServiceState, body: T) -> Response {
    Json(Envelope {
        checkpoint_hash: state.artifacts.checkpoint_hash.clone(),
        body,
    })
    .into_response()
}

fn rejection(r: BytesRejection) -> ApiError {
    let status = r.status();
    let kind = if status == StatusCode::PAYLOAD_TOO_LARGE {
        "payload_too_large"
    } else {
        "bad_request"
    };
    ApiError::new(status.as_u16(), kind, r.body_text())
}

/// Parses the body and runs `f` off the async workers. Panics surface as 500s.
async fn handle<Req, Resp, F>(state: Arc<ServiceState>, body: Result<Bytes, BytesRejection>, f: F) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
    F: FnOnce(&ServiceState, Req) -> ApiResult<Resp> + Send + 'static,
{
    let req: Req = match body.map_err(rejection).and_then(|b| api::parse_json(&b)) {
        Ok(r) => r,
        Err(e) => return error_response(&state, &e),
    };
    let worker = state.clone();
    match tokio::task::spawn_blocking(move || f(&worker, req)).await {
        Ok(Ok(resp)) => ok_response(&state, resp),
        Ok(Err(e)) => error_response(&state, &e),
        Err(join) => {
            tracing::error!("request handler failed: {join}");
            error_response(&state, &ApiError::new(500, "internal", "request handler failed"))
        }
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
}

async fn health(State(s): State<Arc<ServiceState>>) -> Response {
    ok_response(&s, Health { status: "ok" })
}

async fn skeleton(State(s): State<Arc<ServiceState>>) -> Response {
    ok_response(&s, s.artifacts.template.to_doc())
}

async fn solve(State(s): State<Arc<ServiceState>>, body: Result<Bytes, BytesRejection>) -> Response {
    handle(s, body, |s, req| api::solve(&s.artifacts, &req)).await
}

async fn invert_shape(State(s): State<Arc<ServiceState>>, body: Result<Bytes, BytesRejection>) -> Response {
    handle(s, body, |s, req| api::invert(&s.artifacts.template, &s.bank, &req)).await
}

async fn recover(State(s): State<Arc<ServiceState>>, body: Result<Bytes, BytesRejection>) -> Response {
    handle(s, body, |s, req| api::recover(&s.artifacts, &req)).await
}

async fn bootstrap(State(s): State<Arc<ServiceState>>, body: Result<Bytes, BytesRejection>) -> Response {
    handle(s, body, |s, req| api::bootstrap(&s.artifacts, &s.bank, &req)).await
}

async fn not_found(State(s): State<Arc<ServiceState>>) -> Response {
    error_response(&s, &ApiError::new(404, "not_found", "no such endpoint"))
}

async fn wrong_method(State(s): State<Arc<ServiceState>>) -> Response {
    error_response(&s, &ApiError::new(405, "method_not_allowed", "method not allowed"))
}

pub fn router(state: Arc<ServiceState>, request_limit: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/skeleton", get(skeleton))
        .route("/solve", post(solve))
        .route("/invert-shape", post(invert_shape))
        .route("/recover-effectors", post(recover))
        .route("/scene/bootstrap", post(bootstrap))
        .fallback(not_found)
        .method_not_allowed_fallback(wrong_method)
        .layer(DefaultBodyLimit::max(request_limit))
        .with_state(state)
}

pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    let state = Arc::new(ServiceState::load(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(
        addr = %listener.local_addr()?,
        checkpoint_hash = %state.artifacts.checkpoint_hash,
        "serving"
    );
    axum::serve(listener, router(state, config.request_limit))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
