#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use kecr_cli::server::{router, AppState};
use kecr_core::context::encode_conversations;
use kecr_core::corpus::load_corpus;
use kecr_core::{trainer, Config, Engine, KnowledgeGraph, Model, TemplateSet};
use serde_json::Value;
use tower::ServiceExt;

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// Trains the shipped toy configuration in process.
pub fn toy_engine() -> Engine {
    let dir = toy_dir();
    let kg = KnowledgeGraph::load_triples(&dir.join("triples.tsv"), &dir.join("aliases.jsonl"))
        .unwrap()
        .expand();
    let cfg = Config::load(&dir.join("config.txt")).unwrap();
    let mut model = Model::init(&kg, &cfg);
    let (records, _) = load_corpus(&dir.join("corpus.jsonl"), &kg).unwrap();
    let convs = encode_conversations(records, &kg, &model.embedder);
    trainer::train(&mut model, &convs, &kg).unwrap();
    let templates = TemplateSet::load(&dir.join("templates.json")).unwrap();
    Engine::new(model, kg, templates).unwrap()
}

pub fn app(engine: Engine, seed: u64) -> axum::Router {
    router(Arc::new(AppState::new(engine, seed)))
}

pub async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn open(app: &axum::Router) -> String {
    let (status, v) = call(app, "POST", "/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

pub async fn say(app: &axum::Router, id: &str, text: &str) -> (StatusCode, Value) {
    let body = serde_json::json!({ "text": text }).to_string();
    call(app, "POST", &format!("/session/{id}/utterance"), Some(&body)).await
}
