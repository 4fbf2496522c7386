use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use discovery_cli::config::{Source, UniverseSource, WorldConfig};
use discovery_cli::service::{binary_world, router, AppState, ServiceConfig, WorldEntry};
use persona_discovery::responder::synthetic::SyntheticSpec;
use persona_discovery::responder::TabularWorldFile;
use persona_discovery::PlannerParams;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

/// Three facts, one question; reply "r" has likelihoods (0.5, 0.3, 0.2).
fn trio_world() -> WorldConfig {
    WorldConfig::Tabular {
        universe: UniverseSource::Texts(vec!["a".into(), "b".into(), "c".into()]),
        table: Source::Inline(TabularWorldFile {
            probes: vec!["which?".into()],
            responses: vec!["r".into(), "s".into()],
            table: vec![vec![vec![0.5, 0.3, 0.2], vec![0.5, 0.7, 0.8]]],
        }),
    }
}

fn config() -> ServiceConfig {
    ServiceConfig {
        worlds: vec![
            WorldEntry { id: "binary".into(), world: binary_world(), pool: None },
            WorldEntry { id: "trio".into(), world: trio_world(), pool: None },
            WorldEntry {
                id: "synthetic".into(),
                world: WorldConfig::Synthetic(SyntheticSpec::default()),
                pool: None,
            },
        ],
        default_world: Some("binary".into()),
        planner: PlannerParams { n_candidates: 12, n_rollouts: 3, ..PlannerParams::default() },
        ..ServiceConfig::default()
    }
}

fn app(log_dir: &Path) -> Router {
    let state = AppState::new(&config(), Path::new(""), log_dir.join("log.jsonl")).unwrap();
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, body: Value) -> Value {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[tokio::test]
async fn health_and_universe() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["worlds"], json!(["binary", "synthetic", "trio"]));

    let (_, v) = call(&app, "GET", "/universe", None).await;
    assert_eq!(v["world"], "binary");
    assert_eq!(v["facts"][1]["text"], "i have a cat");
    let (_, v) = call(&app, "GET", "/universe?world=synthetic", None).await;
    assert_eq!(v["facts"].as_array().unwrap().len(), 30);
    let (status, v) = call(&app, "GET", "/universe?world=nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_world");
}

#[tokio::test]
async fn structured_create_offers_reply_options() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let a = create(&app, json!({"k": 3, "mode": "structured", "responder_config_id": "synthetic"})).await;
    assert!(!a["session_id"].as_str().unwrap().is_empty());
    assert!(!a["reply_options"].as_array().unwrap().is_empty());
    assert!(!a["opening_question"].as_str().unwrap().is_empty());
    let b = create(&app, json!({"k": 3, "responder_config_id": "synthetic"})).await;
    assert_ne!(a["session_id"], b["session_id"]);
}

#[tokio::test]
async fn bad_create_requests_are_rejected() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"k": 2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_k");
    assert_eq!(v["message"], "k must be < universe size");
    assert_eq!(v["detail"]["universe_size"], 2);

    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"k": 1, "responder_config_id": "mars"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "unknown_world");

    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"k": "three"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");
}

#[tokio::test]
async fn fresh_session_has_no_history_and_zero_score() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 1})).await;
    let id = s["session_id"].as_str().unwrap();
    let (status, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["history"], json!([]));
    assert_eq!(f(&v["belief"]["discovery_score"]), 0.0);
    assert_eq!(v["pending_question"], "do you have a dog?");
    assert_eq!(v["ended"], false);
}

#[tokio::test]
async fn nine_to_one_reply_moves_the_marginals() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 1})).await;
    let id = s["session_id"].as_str().unwrap();
    let options = s["reply_options"].as_array().unwrap();
    let yes = options.iter().find(|o| o["text"] == "yes, a dog").unwrap();
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/reply"), Some(json!({"choice_id": yes["id"]}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let m = &v["belief"]["marginals"];
    assert!((f(&m[0]) - 0.9).abs() < 1e-9);
    assert!((f(&m[1]) - 0.1).abs() < 1e-9);
    assert!((f(&v["belief"]["discovery_score"]) - 0.3681).abs() < 1e-4);
    assert_eq!(v["exchange"], 1);
}

#[tokio::test]
async fn uninformative_freetext_reply_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 1, "mode": "freetext"})).await;
    assert!(s.get("reply_options").is_none());
    let id = s["session_id"].as_str().unwrap();
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/reply"), Some(json!({"text": "zzz qqq"}))).await;
    assert!((f(&v["belief"]["entropy"]) - f(&s["belief"]["entropy"])).abs() < 1e-12);
    assert!(f(&v["belief"]["discovery_score"]).abs() < 1e-12);
}

#[tokio::test]
async fn wrong_reply_kinds_are_rejected() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 1})).await;
    let id = s["session_id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/reply");
    let (status, v) = call(&app, "POST", &uri, Some(json!({"text": "yes"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "wrong_reply_kind");
    let (status, v) = call(&app, "POST", &uri, Some(json!({"choice_id": 99}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "invalid_choice");

    let t = create(&app, json!({"k": 1, "mode": "freetext"})).await;
    let uri = format!("/sessions/{}/reply", t["session_id"].as_str().unwrap());
    let (status, v) = call(&app, "POST", &uri, Some(json!({"choice_id": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "wrong_reply_kind");

    // a rejected reply leaves the session untouched
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["history"], json!([]));
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    for (method, uri, body) in [
        ("GET", "/sessions/nope", None),
        ("POST", "/sessions/nope/reply", Some(json!({"choice_id": 0}))),
        ("POST", "/sessions/nope/guess", Some(json!({"m": 1}))),
        ("POST", "/sessions/nope/end", None),
    ] {
        let (status, v) = call(&app, method, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
        assert_eq!(v["error"], "session_not_found");
    }
}

#[tokio::test]
async fn guess_lists_subsets_best_first() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 2, "responder_config_id": "trio"})).await;
    let id = s["session_id"].as_str().unwrap();
    let r = s["reply_options"].as_array().unwrap().iter().find(|o| o["text"] == "r").unwrap()["id"].clone();
    call(&app, "POST", &format!("/sessions/{id}/reply"), Some(json!({"choice_id": r}))).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/guess"), Some(json!({"m": 3}))).await;
    assert_eq!(status, StatusCode::OK);
    let top = v["top"].as_array().unwrap();
    let expected = [(json!([0, 1]), 0.40), (json!([0, 2]), 0.35), (json!([1, 2]), 0.25)];
    assert_eq!(top.len(), 3);
    for (got, (subset, p)) in top.iter().zip(expected) {
        assert_eq!(got["subset"], subset);
        assert!((f(&got["probability"]) - p).abs() < 1e-9);
    }
    assert_eq!(top[0]["facts"], json!(["a", "b"]));
}

#[tokio::test]
async fn ending_twice_conflicts_and_logs_once() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 1})).await;
    let id = s["session_id"].as_str().unwrap();
    call(&app, "POST", &format!("/sessions/{id}/reply"), Some(json!({"choice_id": 0}))).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/end"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["exchanges"], 1);
    assert_eq!(v["transcript"].as_array().unwrap().len(), 2);
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/end"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "session_ended");
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/reply"), Some(json!({"choice_id": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["ended"], true);
    assert_eq!(v["pending_question"], Value::Null);

    let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let record: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(record["session_id"], id);
    assert_eq!(record["scores"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_replies_to_one_session_are_serialized() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let s = create(&app, json!({"k": 2, "responder_config_id": "synthetic"})).await;
    let id = s["session_id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/reply");
    let (a, b) = tokio::join!(
        call(&app, "POST", &uri, Some(json!({"choice_id": 0}))),
        call(&app, "POST", &uri, Some(json!({"choice_id": 1}))),
    );
    assert_eq!(a.0, StatusCode::OK, "{}", a.1);
    assert_eq!(b.0, StatusCode::OK, "{}", b.1);
    let mut exchanges = [a.1["exchange"].as_u64().unwrap(), b.1["exchange"].as_u64().unwrap()];
    exchanges.sort_unstable();
    assert_eq!(exchanges, [1, 2]);

    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let history = v["history"].as_array().unwrap();
    assert_eq!(history.len(), 4);
    for pair in history.windows(2) {
        assert_ne!(pair[0]["speaker"], pair[1]["speaker"]);
    }
    assert_eq!(v["snapshots"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn cors_is_enabled() {
    let dir = TempDir::new().unwrap();
    let app = app(dir.path());
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[test]
fn service_config_round_trips_through_json() {
    let text = serde_json::to_string(&config()).unwrap();
    let back: ServiceConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, config());
    let minimal: ServiceConfig =
        serde_json::from_str(r#"{"worlds": [{"id": "s", "kind": "synthetic", "n_topics": 4}]}"#).unwrap();
    assert_eq!(minimal.worlds[0].id, "s");
    assert!(AppState::new(&minimal, Path::new(""), "log.jsonl".into()).is_ok());
}
