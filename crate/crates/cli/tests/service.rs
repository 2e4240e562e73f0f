mod common;

use axum::http::StatusCode;
use common::*;
use promptloom::service::{router, AppState, ServeOptions};
use promptloom_core::session::SessionStore;
use promptloom_core::RunOptions;

fn store_fixture(dir: &std::path::Path) -> (SessionStore, String) {
    let store = SessionStore::open(dir).unwrap();
    let (engine, _) = fixture_engine();
    let s = engine.run_session(TASK, &RunOptions { seed: 7, ..Default::default() }, &store, Some("fixture".into())).unwrap();
    (store, s.id)
}

const OPTIMIZE: &str = r#"{"raw_input": "[TASK] classify sentiment of product reviews", "seed": 7}"#;

#[tokio::test(flavor = "multi_thread")]
async fn healthz() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&SessionStore::open(dir.path()).unwrap(), open_factory());
    assert_eq!(call(&app, "GET", "/healthz", None).await, (StatusCode::OK, "ok".to_string()));
}

#[tokio::test(flavor = "multi_thread")]
async fn optimize_status_transitions() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Gate::default();
    let app = app(&SessionStore::open(dir.path()).unwrap(), gated_factory(gate.clone()));

    let (code, body) = call(&app, "POST", "/v1/optimize", Some(OPTIMIZE)).await;
    assert_eq!(code, StatusCode::ACCEPTED, "{body}");
    let accepted = json(&body);
    let id = accepted["session_id"].as_str().unwrap().to_string();
    assert_eq!(accepted["status"], "pending");

    reach(&app, &id, "running").await;
    let (code, _) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    gate.open();
    let done = settle(&app, &id).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["result"]["session_id"], id.as_str());
    assert_eq!(done["result"]["dataset_size"], 30);

    let (code, body) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(code, StatusCode::OK);
    let doc = json(&body);
    assert_eq!(doc["versions"][0]["index"], 0);
    assert!(doc["versions"][0]["prompt_text"].is_string());
    assert_eq!(doc["event_log"][0]["kind"], "created");
}

#[tokio::test(flavor = "multi_thread")]
async fn optimize_request_validation() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&SessionStore::open(dir.path()).unwrap(), open_factory());
    let cases = [
        (r#"{"raw_input": "x", "colour": "red"}"#, "InvalidRequest"),
        (r#"{"raw_input": "   "}"#, "InvalidRequest"),
        (r#"{"strategy": "quick_search"}"#, "InvalidRequest"),
        (r#"{"raw_input": "x", "strategy": "warp_speed"}"#, "InvalidRequest"),
        (r#"{"raw_input": "x", "lambda": -1.0}"#, "InvalidConfig"),
        (r#"{"raw_input": "x", "models": {"teacher": "a", "judge": "b"}}"#, "InvalidRequest"),
        ("not json", "InvalidRequest"),
    ];
    for (body, name) in cases {
        let (code, resp) = call(&app, "POST", "/v1/optimize", Some(body)).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{body} -> {resp}");
        let err = json(&resp);
        assert_eq!(err["error"], name, "{body}");
        assert!(err["detail"].as_str().is_some_and(|d| !d.is_empty()));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_job_reports_error_name() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&SessionStore::open(dir.path()).unwrap(), open_factory());
    // The fixture has no reply for an unrelated task, so extraction fails.
    let (code, body) = call(&app, "POST", "/v1/optimize", Some(r#"{"raw_input": "[TASK] solve 2+2"}"#)).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let id = json(&body)["session_id"].as_str().unwrap().to_string();
    let status = settle(&app, &id).await;
    assert_eq!(status["status"], "error");
    assert!(status["error"]["error"].is_string());
}

#[tokio::test(flavor = "multi_thread")]
async fn queue_depth_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Gate::default();
    let app = app(&SessionStore::open(dir.path()).unwrap(), gated_factory(gate.clone()));

    let (_, body) = call(&app, "POST", "/v1/optimize", Some(OPTIMIZE)).await;
    let first = json(&body)["session_id"].as_str().unwrap().to_string();
    reach(&app, &first, "running").await;
    let mut ids = vec![first];
    for _ in 0..promptloom::service::QUEUE_DEPTH {
        let (code, body) = call(&app, "POST", "/v1/optimize", Some(OPTIMIZE)).await;
        assert_eq!(code, StatusCode::ACCEPTED);
        ids.push(json(&body)["session_id"].as_str().unwrap().to_string());
    }
    assert_eq!(status_of(&app, &ids[1]).await, "pending");
    let (code, body) = call(&app, "POST", "/v1/optimize", Some(OPTIMIZE)).await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(json(&body)["error"], "QueueFull");

    gate.open();
    for id in &ids {
        assert_eq!(settle(&app, id).await["status"], "done");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_requests_give_identical_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&SessionStore::open(dir.path()).unwrap(), open_factory());
    let mut texts = Vec::new();
    for _ in 0..2 {
        let (_, body) = call(&app, "POST", "/v1/optimize", Some(OPTIMIZE)).await;
        let id = json(&body)["session_id"].as_str().unwrap().to_string();
        assert_eq!(settle(&app, &id).await["status"], "done");
        let (_, doc) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
        let doc = json(&doc);
        let versions: Vec<String> =
            doc["versions"].as_array().unwrap().iter().map(|v| v["prompt_text"].as_str().unwrap().to_string()).collect();
        texts.push(versions);
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(texts[0].len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn reads_and_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let (store, id) = store_fixture(dir.path());
    let app = app(&store, open_factory());

    let (code, body) = call(&app, "GET", "/v1/sessions", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(json(&body)[0]["id"], id.as_str());

    let (code, body) = call(&app, "GET", &format!("/v1/sessions/{id}/dataset"), None).await;
    assert_eq!(code, StatusCode::OK);
    let ds = json(&body);
    assert_eq!(ds["examples"].as_array().unwrap().len(), 30);
    assert_eq!(ds["split"]["train"].as_array().unwrap().len(), 6);
    assert_eq!(ds["split"]["val"].as_array().unwrap().len(), 24);

    let (code, body) = call(&app, "GET", &format!("/v1/sessions/{id}/status"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(json(&body)["status"], "done");

    for uri in [
        "/v1/sessions/nope",
        "/v1/sessions/nope/dataset",
        "/v1/sessions/nope/status",
        "/v1/sessions/..%2Fescape",
        "/v1/nothing-here",
    ] {
        let (code, body) = call(&app, "GET", uri, None).await;
        assert_eq!(code, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(json(&body)["error"], "NotFound", "{uri}");
    }
    for uri in ["/v1/sessions/nope/feedback", "/v1/sessions/nope/reoptimize"] {
        let (code, body) = call(&app, "POST", uri, Some(r#"{"target":"prompt_version","target_ref":"0","start_offset":0,"end_offset":1,"comment":"x"}"#)).await;
        assert_eq!(code, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(json(&body)["error"], "NotFound");
    }
}

fn draft(version: usize, start: usize, end: usize, comment: &str) -> String {
    serde_json::json!({
        "target": "prompt_version",
        "target_ref": version.to_string(),
        "start_offset": start,
        "end_offset": end,
        "comment": comment,
    })
    .to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn feedback_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (store, id) = store_fixture(dir.path());
    let app = app(&store, open_factory());
    let uri = format!("/v1/sessions/{id}/feedback");
    let prompt = store.load(&id).unwrap().versions[1].prompt_text.clone();

    let (code, body) = call(&app, "POST", &uri, Some(&draft(1, 10, 5, "x"))).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::BAD_REQUEST, "OffsetOutOfRange".into()));

    let past_end = prompt.chars().count() + 1;
    let (code, body) = call(&app, "POST", &uri, Some(&draft(1, 0, past_end, "x"))).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::BAD_REQUEST, "OffsetOutOfRange".into()));

    let (code, body) = call(&app, "POST", &uri, Some(&draft(9, 0, 1, "x"))).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::BAD_REQUEST, "UnknownTarget".into()));

    let mut extra = json(&draft(1, 0, 1, "x"));
    extra["colour"] = "red".into();
    let (code, body) = call(&app, "POST", &uri, Some(&extra.to_string())).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::BAD_REQUEST, "InvalidRequest".into()));

    let mut wrong = json(&draft(1, 0, 8, "x"));
    wrong["selected_text"] = "Something".into();
    let (code, body) = call(&app, "POST", &uri, Some(&wrong.to_string())).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::BAD_REQUEST, "SelectionMismatch".into()));

    let (code, body) = call(&app, "POST", &uri, Some(&draft(1, 0, 8, "be more specific"))).await;
    assert_eq!(code, StatusCode::CREATED, "{body}");
    let item = json(&body);
    let expected: String = prompt.chars().take(8).collect();
    assert_eq!(item["selected_text"], expected.as_str());
    assert_eq!(item["resolved"], false);
    assert_eq!(store.load(&id).unwrap().unresolved_count(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn reoptimize_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (store, id) = store_fixture(dir.path());
    let gate = Gate::default();
    let app = app(&store, gated_factory(gate.clone()));
    let reopt = format!("/v1/sessions/{id}/reoptimize");

    let (code, body) = call(&app, "POST", &reopt, None).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::CONFLICT, "ReoptimizationNotRequired".into()));

    let (code, _) = call(&app, "POST", &format!("/v1/sessions/{id}/feedback"), Some(&draft(1, 0, 8, "mention mixed reviews"))).await;
    assert_eq!(code, StatusCode::CREATED);

    let (code, body) = call(&app, "POST", &reopt, None).await;
    assert_eq!(code, StatusCode::ACCEPTED, "{body}");
    assert_eq!(json(&body)["session_id"], id.as_str());

    let (code, body) = call(&app, "POST", &reopt, None).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::CONFLICT, "JobInFlight".into()));
    let (code, body) = call(&app, "POST", &format!("/v1/sessions/{id}/feedback"), Some(&draft(1, 0, 3, "late"))).await;
    assert_eq!((code, json(&body)["error"].clone()), (StatusCode::CONFLICT, "JobInFlight".into()));

    gate.open();
    let status = settle(&app, &id).await;
    assert_eq!(status["status"], "done", "{status}");
    let s = store.load(&id).unwrap();
    assert_eq!(s.versions.len(), 3);
    assert_eq!(s.versions[2].parent, Some(1));
    assert_eq!(s.unresolved_count(), 0);
    assert!(!s.needs_reoptimization);
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_reproduces_reads() {
    let dir = tempfile::tempdir().unwrap();
    let (store, id) = store_fixture(dir.path());
    let uris = [
        "/v1/sessions".to_string(),
        format!("/v1/sessions/{id}"),
        format!("/v1/sessions/{id}/dataset"),
        format!("/v1/sessions/{id}/status"),
    ];
    let first = app(&store, open_factory());
    let (code, _) = call(&first, "POST", &format!("/v1/sessions/{id}/feedback"), Some(&draft(0, 2, 9, "tone"))).await;
    assert_eq!(code, StatusCode::CREATED);
    let mut before = Vec::new();
    for u in &uris {
        before.push(call(&first, "GET", u, None).await);
    }
    drop(first);

    let reopened = SessionStore::open(dir.path()).unwrap();
    let second = app(&reopened, open_factory());
    for (u, b) in uris.iter().zip(&before) {
        assert_eq!(&call(&second, "GET", u, None).await, b, "{u}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn cors_and_static_files() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>ui</html>").unwrap();
    let store = SessionStore::open(dir.path().join("store")).unwrap();
    let state = AppState::start(store, open_factory());
    let opts = ServeOptions { cors_origin: Some("http://localhost:5173".into()), ui_dir: Some(ui) };
    let app = router(state, &opts).unwrap();

    let (code, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!((code, body.as_str()), (StatusCode::OK, "<html>ui</html>"));

    use tower::ServiceExt;
    let req = axum::http::Request::builder()
        .method("OPTIONS")
        .uri("/v1/sessions")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(axum::body::Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://localhost:5173");

    let bad = ServeOptions { cors_origin: Some("bad\norigin".into()), ui_dir: None };
    let state = AppState::start(SessionStore::open(dir.path().join("s2")).unwrap(), open_factory());
    assert!(router(state, &bad).is_err());
}
