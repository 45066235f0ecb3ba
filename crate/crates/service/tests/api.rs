use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hse_service::{router, AppState, CreateSessionResponse, ErrorBody, LabelResponse, NextQuery, SessionState};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(AppState::new(None, None)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

async fn create(app: &Router, body: Value) -> CreateSessionResponse {
    let (status, bytes) = call(app, "POST", "/api/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
    parse(&bytes)
}

fn small_csv() -> String {
    let mut s = String::from("x,y,label\n");
    for i in 0..40 {
        let c = i % 2;
        let off = if c == 0 { -5.0 } else { 5.0 };
        s.push_str(&format!("{},{},{}\n", off + (i as f64) * 0.01, (i as f64) * 0.02, c));
    }
    s
}

#[tokio::test]
async fn create_echoes_defaults() {
    let app = app();
    let r = create(&app, json!({"dataset": "four_gaussians"})).await;
    assert_eq!(r.config.k, 10);
    assert_eq!(r.config.perplexity, 30.0);
    assert_eq!(r.config.query_budget, 50);
    assert_eq!(r.points, 400);
    assert_eq!(r.class_count, 4);
}

#[tokio::test]
async fn create_errors() {
    let app = app();
    let (status, bytes) = call(&app, "POST", "/api/sessions", Some(json!({"dataset": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(parse::<ErrorBody>(&bytes).code, "not_found");

    let body = json!({"csv": small_csv(), "config": {"k": 40}});
    let (status, bytes) = call(&app, "POST", "/api/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = parse(&bytes);
    assert_eq!(err.code, "invalid_config");
    assert!(err.message.contains("k = 40"));

    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!({"dataset": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!({"dataset": "../etc"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app();
    for path in ["next", "state", "export"] {
        let (status, bytes) = call(&app, "GET", &format!("/api/sessions/bogus/{path}"), None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(parse::<ErrorBody>(&bytes).code, "not_found");
    }
    let (status, _) = call(&app, "POST", "/api/sessions/bogus/labels", Some(json!({"point": 0, "class": 0}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn labeling_loop() {
    let app = app();
    let body = json!({"csv": small_csv(), "config": {"k": 5, "query_budget": 4}});
    let created = create(&app, body).await;
    let base = format!("/api/sessions/{}", created.id);

    let (status, first) = call(&app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, again) = call(&app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(first, again);
    let next: NextQuery = parse(&first);
    let (_, state) = call(&app, "GET", &format!("{base}/state"), None).await;
    let state: SessionState = parse(&state);
    let tree = state.tree.unwrap();
    let root = tree.iter().find(|n| n.parent.is_none()).unwrap();
    assert_eq!(next.point, root.representative);
    assert_eq!(next.subqueries_used, 0);

    let stale = (next.point + 1) % 40;
    let (status, bytes) =
        call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": stale, "class": 0}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(parse::<ErrorBody>(&bytes).code, "out_of_order");
    let (status, _) =
        call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": next.point, "class": 2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let truth = |p: usize| p % 2;
    let mut point = next.point;
    for q in 1..=4 {
        let (status, bytes) =
            call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": point, "class": truth(point)}))).await;
        assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
        let r: LabelResponse = parse(&bytes);
        assert_eq!(r.labeled_count, q);
        assert_eq!(r.curve_so_far.len(), q);
        let (status, bytes) =
            call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": point, "class": truth(point)}))).await;
        if q < 4 {
            assert_eq!(status, StatusCode::CONFLICT);
            assert_eq!(parse::<ErrorBody>(&bytes).code, "conflict");
            let (_, bytes) = call(&app, "GET", &format!("{base}/next"), None).await;
            point = parse::<NextQuery>(&bytes).point;
        }
    }
    let (status, bytes) = call(&app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(parse::<ErrorBody>(&bytes).code, "session_complete");

    let (_, bytes) = call(&app, "GET", &format!("{base}/state"), None).await;
    let state: SessionState = parse(&bytes);
    assert_eq!(state.labels.len(), 4);
    for p in &state.points {
        let sum: f64 = p.posterior.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        if p.labeled {
            let y = state.labels.iter().find(|r| r.point == p.point).unwrap().class;
            let mut one_hot = vec![0.0; 2];
            one_hot[y] = 1.0;
            assert_eq!(p.posterior, one_hot);
        }
    }
    let (status, bytes) = call(&app, "GET", &format!("{base}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let export: Value = parse(&bytes);
    assert_eq!(export["accuracies"].as_array().unwrap().len(), 4);
    assert_eq!(export["strategy"], "hse");
    assert_eq!(export["per_query_seconds"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn unlabeled_inline_dataset() {
    let app = app();
    let mut csv = String::from("a,b\n");
    for i in 0..50 {
        csv.push_str(&format!("{},{}\n", i as f64 * 0.1, (i * i) as f64 * 0.01));
    }
    let created = create(&app, json!({"csv": csv, "class_count": 3, "config": {"k": 4}})).await;
    assert_eq!(created.class_count, 3);
    let base = format!("/api/sessions/{}", created.id);
    let (_, bytes) = call(&app, "GET", &format!("{base}/next"), None).await;
    let next: NextQuery = parse(&bytes);
    let (status, bytes) =
        call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": next.point, "class": 2}))).await;
    assert_eq!(status, StatusCode::OK);
    let r: LabelResponse = parse(&bytes);
    assert_eq!(r.accuracy, None);
    assert!(r.curve_so_far.is_empty());
}

#[tokio::test]
async fn snapshots_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::new(None, Some(dir.path().to_path_buf())));
    let app = router(state);
    let created = create(&app, json!({"csv": small_csv(), "config": {"k": 5, "strategy": "rand", "seed": 4}})).await;
    let base = format!("/api/sessions/{}", created.id);
    for _ in 0..3 {
        let (_, bytes) = call(&app, "GET", &format!("{base}/next"), None).await;
        let p = parse::<NextQuery>(&bytes).point;
        call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": p, "class": p % 2}))).await;
    }
    let (_, before) = call(&app, "GET", &format!("{base}/state"), None).await;
    let (_, next_before) = call(&app, "GET", &format!("{base}/next"), None).await;

    let revived = Arc::new(AppState::new(None, Some(dir.path().to_path_buf())));
    let (ok, failed) = revived.restore_snapshots();
    assert_eq!(ok, vec![created.id.clone()]);
    assert!(failed.is_empty());
    let app = router(revived);
    let (_, after) = call(&app, "GET", &format!("{base}/state"), None).await;
    let (before, after): (SessionState, SessionState) = (parse(&before), parse(&after));
    assert_eq!(before.labels, after.labels);
    assert_eq!(before.curve, after.curve);
    let (_, next_after) = call(&app, "GET", &format!("{base}/next"), None).await;
    assert_eq!(parse::<NextQuery>(&next_before).point, parse::<NextQuery>(&next_after).point);
}

#[tokio::test]
async fn concurrent_sessions_are_independent() {
    let app = app();
    let mut ids = Vec::new();
    for seed in 0..4 {
        let body = json!({"csv": small_csv(), "config": {"k": 5, "strategy": "random", "seed": seed}});
        ids.push(create(&app, body).await.id);
    }
    let tasks: Vec<_> = ids
        .iter()
        .map(|id| {
            let app = app.clone();
            let base = format!("/api/sessions/{id}");
            tokio::spawn(async move {
                for _ in 0..5 {
                    let (_, bytes) = call(&app, "GET", &format!("{base}/next"), None).await;
                    let p = parse::<NextQuery>(&bytes).point;
                    let (status, _) =
                        call(&app, "POST", &format!("{base}/labels"), Some(json!({"point": p, "class": p % 2}))).await;
                    assert_eq!(status, StatusCode::OK);
                }
            })
        })
        .collect();
    for t in tasks {
        t.await.unwrap();
    }
    for id in ids {
        let (_, bytes) = call(&app, "GET", &format!("/api/sessions/{id}/state"), None).await;
        assert_eq!(parse::<SessionState>(&bytes).labels.len(), 5);
    }
}
