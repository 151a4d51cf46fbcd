use std::path::Path;
use std::sync::Arc;

use acurai::gateway::{router, AppState};
use acurai_core::llm::{LlmClient, LlmError, ReplayClient, ScriptedClient};
use acurai_core::pipeline::PipelineConfig;
use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> &'static Path {
    Box::leak(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").into_boxed_path())
}

fn app(llm: Arc<dyn LlmClient>) -> Router {
    let config = PipelineConfig::default();
    let detector = config.detector().unwrap();
    router(Arc::new(AppState::new(config, llm, detector)))
}

fn replay_app() -> Router {
    app(Arc::new(ReplayClient::from_path(&fixtures().join("cassettes/replay.json")).unwrap()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, headers, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(body: Value) -> Request<Body> {
    Request::post("/v1/answer").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

fn ice() -> Value {
    let line = std::fs::read_to_string(fixtures().join("records.jsonl")).unwrap();
    let r: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    json!({"query": r["query"], "passages": r["passages"]})
}

#[tokio::test]
async fn healthz() {
    let (status, _, body) = call(&replay_app(), Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["name"], "acurai");
}

#[tokio::test]
async fn answers_the_appendix_query_and_keeps_the_trace() {
    let app = replay_app();
    let (status, _, body) = call(&app, post(ice())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["verdict"], "faithful");
    assert!(body["answer"].as_str().unwrap().starts_with("**Benefits of ice for neck**"));
    assert!(body["timings"]["total"].is_u64());
    let id = body["trace_id"].as_str().unwrap();
    let (status, _, trace) = call(&app, Request::get(format!("/v1/trace/{id}")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["query"], "benefits of ice for neck");
    let (status, _, _) = call(&app, Request::get("/v1/trace/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn validation_errors_name_fields() {
    let app = replay_app();
    let (status, _, body) = call(&app, post(json!({"query": "q", "passages": []}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["fields"][0]["field"], "passages");
    let (status, _, body) = call(&app, post(json!({"passages": ["x", 3]}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = body["error"]["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields, vec!["query", "passages[1]"]);
    let (status, _, body) = call(&app, post(json!({"query": "q", "passages": ["p"], "options": {"embedding": {"threshold": 7}}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["fields"][0]["field"], "options");
    let req = Request::post("/v1/answer").body(Body::from("{not json")).unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn backend_failure_is_502_with_retry_after() {
    let llm = Arc::new(ScriptedClient::new("stub", |r| {
        if r.messages[0].content.starts_with("Rewrite") {
            Ok(String::new())
        } else {
            Err(LlmError::RateLimited {
                attempts: 3,
                retry_after_secs: Some(7),
            })
        }
    }));
    let body = json!({"query": "What is calcium?", "passages": ["Calcium is a metal."]});
    let (status, headers, body) = call(&app(llm), post(body)).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(headers["retry-after"], "7");
    assert_eq!(body["error"]["kind"], "backend");
}

#[tokio::test]
async fn concurrent_requests_keep_their_own_traces() {
    let echo = Arc::new(ScriptedClient::new("stub", |r| {
        if r.messages[0].content.starts_with("Rewrite") {
            return Ok(String::new());
        }
        let (_, facts) = r.messages[1].content.split_once("\n\n").unwrap();
        Ok(facts.lines().filter(|l| !l.starts_with("Section ")).collect::<Vec<_>>().join(" "))
    }));
    let app = app(echo);
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let passage = format!("Item {i} weighs {} grams.", 100 + i);
            let (status, _, body) = call(&app, post(json!({"query": format!("What does item {i} weigh?"), "passages": [passage]}))).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            let id = body["trace_id"].as_str().unwrap().to_string();
            let (_, _, trace) = call(&app, Request::get(format!("/v1/trace/{id}")).body(Body::empty()).unwrap()).await;
            assert_eq!(trace["passages"][0], json!(passage));
            assert!(body["answer"].as_str().unwrap().contains(&format!("{} grams", 100 + i)));
            id
        }));
    }
    let mut ids = Vec::new();
    for h in handles {
        ids.push(h.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 8);
}
