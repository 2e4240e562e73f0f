#![allow(dead_code)]

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use promptloom::provider::ProviderSettings;
use promptloom::service::{router, AppState, EngineFactory, ServeOptions};
use promptloom_core::providers::{LlmClient, MockProvider, ModelConfig, ModelRole, UsageLedger};
use promptloom_core::session::SessionStore;
use promptloom_core::Engine;
use tower::ServiceExt;

pub const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/sentiment_mock.json");
pub const TASK: &str = "[TASK] classify sentiment of product reviews";

/// Engine over the sentiment fixture plus a handle on the shared mock, whose
/// call log records every teacher and student prompt.
pub fn fixture_engine() -> (Engine, MockProvider) {
    let mock = MockProvider::from_json_file(FIXTURE).unwrap();
    let ledger = Arc::new(UsageLedger::default());
    let teacher = LlmClient::mock(ModelConfig::mock(ModelRole::Teacher), mock.clone(), ledger.clone());
    let student = LlmClient::mock(ModelConfig::mock(ModelRole::Student), mock.clone(), ledger);
    (Engine::new(teacher, student), mock)
}

/// A latch the test opens to let held jobs proceed.
#[derive(Clone, Default)]
pub struct Gate(Arc<(Mutex<bool>, Condvar)>);

impl Gate {
    pub fn open(&self) {
        *self.0 .0.lock().unwrap() = true;
        self.0 .1.notify_all();
    }

    pub fn wait(&self) {
        let mut open = self.0 .0.lock().unwrap();
        while !*open {
            open = self.0 .1.wait(open).unwrap();
        }
    }
}

/// Factory over the fixture that blocks each job until the gate opens.
pub fn gated_factory(gate: Gate) -> EngineFactory {
    let settings = ProviderSettings::mock(FIXTURE);
    Arc::new(move |models| {
        gate.wait();
        settings.with_overrides(models).build_engine()
    })
}

pub fn open_factory() -> EngineFactory {
    let gate = Gate::default();
    gate.open();
    gated_factory(gate)
}

pub fn app(store: &SessionStore, factory: EngineFactory) -> Router {
    let state = AppState::start(store.clone(), factory);
    router(state, &ServeOptions::default()).unwrap()
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

pub async fn status_of(app: &Router, id: &str) -> String {
    let (code, body) = call(app, "GET", &format!("/v1/sessions/{id}/status"), None).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    json(&body)["status"].as_str().unwrap().to_string()
}

/// Polls until the job leaves pending and running.
pub async fn settle(app: &Router, id: &str) -> serde_json::Value {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let (_, body) = call(app, "GET", &format!("/v1/sessions/{id}/status"), None).await;
        let v = json(&body);
        if !matches!(v["status"].as_str(), Some("pending" | "running")) {
            return v;
        }
        assert!(Instant::now() < deadline, "job {id} did not finish");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

/// Waits until `id` reports `want`.
pub async fn reach(app: &Router, id: &str, want: &str) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while status_of(app, id).await != want {
        assert!(Instant::now() < deadline, "job {id} never reached {want}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}
