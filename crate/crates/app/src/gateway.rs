//! HTTP surface: `POST /v1/answer`, `GET /v1/trace/{id}`, `GET /healthz`.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use acurai_core::collision::{CollisionDetector, CollisionError};
use acurai_core::llm::{LlmClient, LlmError};
use acurai_core::pipeline::{Pipeline, PipelineConfig, PipelineError, RunVerdict};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::config::apply_overrides;

/// Traces kept in memory for `GET /v1/trace/{id}`.
pub const TRACE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayRequest {
    pub query: String,
    pub passages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayResponse {
    pub answer: String,
    pub verdict: RunVerdict,
    pub trace_id: String,
    pub timings: std::collections::BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Default)]
struct TraceStore {
    by_id: HashMap<String, Arc<str>>,
    order: VecDeque<String>,
}

impl TraceStore {
    fn insert(&mut self, id: String, json: String) {
        if self.order.len() >= TRACE_CAPACITY {
            if let Some(old) = self.order.pop_front() {
                self.by_id.remove(&old);
            }
        }
        self.order.push_back(id.clone());
        self.by_id.insert(id, json.into());
    }
}

pub struct AppState {
    config: PipelineConfig,
    llm: Arc<dyn LlmClient>,
    detector: CollisionDetector,
    traces: RwLock<TraceStore>,
    trace_dir: Option<PathBuf>,
    after_run: Option<Box<dyn Fn() + Send + Sync>>,
}

impl AppState {
    pub fn new(config: PipelineConfig, llm: Arc<dyn LlmClient>, detector: CollisionDetector) -> Self {
        Self {
            config,
            llm,
            detector,
            traces: RwLock::new(TraceStore::default()),
            trace_dir: None,
            after_run: None,
        }
    }

    /// Also writes each trace to `{dir}/{trace_id}.json`.
    pub fn with_trace_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.trace_dir = dir;
        self
    }

    /// Called after every pipeline run, e.g. to flush a recording cassette.
    pub fn with_after_run(mut self, f: impl Fn() + Send + Sync + 'static) -> Self {
        self.after_run = Some(Box::new(f));
        self
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/answer", post(answer))
        .route("/v1/trace/{trace_id}", get(trace))
        .route("/healthz", get(healthz))
        .with_state(state)
}

fn error_body(status: StatusCode, kind: &str, message: String) -> Response {
    (status, Json(json!({"error": {"kind": kind, "message": message}}))).into_response()
}

fn field_errors(errors: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": {"kind": "invalid-request", "fields": errors}}))).into_response()
}

fn field(field: &str, message: &str) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

/// Field-level validation of a raw request body.
pub fn validate_request(body: &[u8]) -> Result<GatewayRequest, Vec<FieldError>> {
    let v: Value = serde_json::from_slice(body).map_err(|e| vec![field("body", &format!("not valid JSON: {e}"))])?;
    let Some(obj) = v.as_object() else {
        return Err(vec![field("body", "must be a JSON object")]);
    };
    let mut errors = Vec::new();
    let query = match obj.get("query") {
        Some(Value::String(q)) if !q.trim().is_empty() => q.clone(),
        Some(Value::String(_)) => {
            errors.push(field("query", "must not be empty"));
            String::new()
        }
        Some(_) => {
            errors.push(field("query", "must be a string"));
            String::new()
        }
        None => {
            errors.push(field("query", "is required"));
            String::new()
        }
    };
    let mut passages = Vec::new();
    match obj.get("passages") {
        Some(Value::Array(items)) => {
            for (i, p) in items.iter().enumerate() {
                match p.as_str() {
                    Some(s) => passages.push(s.to_string()),
                    None => errors.push(field(&format!("passages[{i}]"), "must be a string")),
                }
            }
            if items.is_empty() || (passages.len() == items.len() && passages.iter().all(|p| p.trim().is_empty())) {
                errors.push(field("passages", "must contain at least one non-empty passage"));
            }
        }
        Some(_) => errors.push(field("passages", "must be an array of strings")),
        None => errors.push(field("passages", "is required")),
    }
    let options = match obj.get("options") {
        None | Some(Value::Null) => None,
        Some(o @ Value::Object(_)) => Some(o.clone()),
        Some(_) => {
            errors.push(field("options", "must be an object"));
            None
        }
    };
    if errors.is_empty() {
        Ok(GatewayRequest { query, passages, options })
    } else {
        Err(errors)
    }
}

fn backend_failure(e: &LlmError) -> Response {
    let mut resp = error_body(StatusCode::BAD_GATEWAY, "backend", e.to_string());
    if let LlmError::RateLimited {
        retry_after_secs: Some(s), ..
    } = e
    {
        if let Ok(v) = HeaderValue::from_str(&s.to_string()) {
            resp.headers_mut().insert(header::RETRY_AFTER, v);
        }
    }
    resp
}

fn pipeline_failure(e: PipelineError) -> Response {
    match e {
        PipelineError::InvalidInput(m) => field_errors(vec![field("body", &m)]),
        PipelineError::InvalidConfig(m) => field_errors(vec![field("options", &m)]),
        PipelineError::Llm { source, .. } => backend_failure(&source),
        PipelineError::Collision(c @ CollisionError::Provider { .. }) => error_body(StatusCode::BAD_GATEWAY, "embedding", c.to_string()),
        other => error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    }
}

async fn answer(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req = match validate_request(&body) {
        Ok(r) => r,
        Err(errors) => return field_errors(errors),
    };
    let config = match &req.options {
        Some(o) => match apply_overrides(&state.config, o) {
            Ok(c) => c,
            Err(m) => return field_errors(vec![field("options", &m)]),
        },
        None => state.config.clone(),
    };
    let worker = state.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let detector = if config.embedding == worker.config.embedding {
            worker.detector.clone()
        } else {
            config.detector()?
        };
        let out = Pipeline::new(config, worker.llm.clone(), detector)?.run(&req.query, &req.passages);
        if let Some(f) = &worker.after_run {
            f();
        }
        out
    })
    .await;
    let out = match joined {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => {
            warn!("pipeline failed: {e}");
            return pipeline_failure(e);
        }
        Err(e) => return error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    let trace_id = uuid::Uuid::new_v4().to_string();
    let trace_json = match serde_json::to_string_pretty(&out.trace) {
        Ok(s) => s,
        Err(e) => return error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    if let Some(dir) = &state.trace_dir {
        let path = dir.join(format!("{trace_id}.json"));
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &trace_json)) {
            warn!("could not write {}: {e}", path.display());
        }
    }
    state.traces.write().unwrap_or_else(|e| e.into_inner()).insert(trace_id.clone(), trace_json);
    let verdict = out.trace.verdict.unwrap_or(RunVerdict::Faithful);
    info!(%trace_id, ?verdict, "answered");
    Json(GatewayResponse {
        answer: out.response,
        verdict,
        trace_id,
        timings: out.timings,
    })
    .into_response()
}

async fn trace(State(state): State<Arc<AppState>>, Path(trace_id): Path<String>) -> Response {
    let found = state.traces.read().unwrap_or_else(|e| e.into_inner()).by_id.get(&trace_id).cloned();
    match found {
        Some(json) => ([(header::CONTENT_TYPE, "application/json")], json.to_string()).into_response(),
        None => error_body(StatusCode::NOT_FOUND, "not-found", format!("no trace {trace_id}")),
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok", "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION")}))
}

/// Serves until ctrl-c. Binding errors (port in use) surface here.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
