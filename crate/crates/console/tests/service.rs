use std::sync::OnceLock;

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::querymodel::serialize_activity_graph;
use actgraph::synthlab::{calibrate, generate_archive, CalibrateOptions, SynthConfig, Template};
use actgraph::{ArchiveStore, CalibrationModel};
use actgraph_console::service::{router, AppState};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

fn models() -> &'static CalibrationModel {
    static MODELS: OnceLock<CalibrationModel> = OnceLock::new();
    MODELS.get_or_init(|| {
        let (store, truth) = generate_archive(&SynthConfig {
            n_clutter: 120,
            seed: 41,
            ..SynthConfig::default()
        })
        .unwrap();
        calibrate(&store, &truth.labels, &CalibrateOptions::default()).unwrap()
    })
}

fn archive() -> ArchiveStore {
    let cfg = SynthConfig {
        n_clutter: 60,
        duration: 900.0,
        seed: 5,
        ..SynthConfig::default()
    }
    .with_planted(Template::ObjectDeposit, 6);
    generate_archive(&cfg).unwrap().0
}

fn state(log: Option<std::path::PathBuf>) -> AppState {
    AppState::new(Some(archive()), models().clone(), log).unwrap()
}

fn deposit_body(extra: Value) -> String {
    let mut doc: Value = serde_json::from_str(&serialize_activity_graph(&Template::ObjectDeposit.query())).unwrap();
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    doc.to_string()
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[tokio::test]
async fn health_reports_whether_an_archive_is_loaded() {
    let empty = AppState::new(None, models().clone(), None).unwrap();
    let (status, body) = call(&empty, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse(&body)["archive_loaded"], false);
    let (_, body) = call(&state(None), "GET", "/api/health", None).await;
    assert_eq!(parse(&body)["archive_loaded"], true);
}

#[tokio::test]
async fn no_archive_is_a_conflict() {
    let empty = AppState::new(None, models().clone(), None).unwrap();
    let (status, body) = call(&empty, "POST", "/api/query", Some(deposit_body(json!({})))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(parse(&body)["error"], "no_archive");
    let (status, _) = call(&empty, "GET", "/api/archive/summary", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn malformed_requests_are_rejected_with_details() {
    let s = state(None);
    let (status, body) = call(&s, "POST", "/api/query", Some("{nodes".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v = parse(&body);
    assert_eq!(v["error"], "invalid_query");
    assert!(v["detail"].as_str().unwrap().contains("JSON"));

    let unknown = r#"{"nodes":[{"id":"a","class":"bicycle"}],"edges":[]}"#;
    let (status, body) = call(&s, "POST", "/api/query", Some(unknown.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(parse(&body)["detail"].as_str().unwrap().contains("bicycle"));

    let disconnected = r#"{"nodes":[{"id":"a","class":"person"},{"id":"b","class":"object"}],"edges":[]}"#;
    let (status, body) = call(&s, "POST", "/api/query", Some(disconnected.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(!parse(&body)["violations"].as_array().unwrap().is_empty());

    for bad in [json!({"eta": 1.5}), json!({"eta": "high"}), json!({"k": -1}), json!({"top_r": 0})] {
        let (status, body) = call(&s, "POST", "/api/query", Some(deposit_body(bad.clone()))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}: {body}");
    }
}

#[tokio::test]
async fn unreachable_recall_is_unprocessable() {
    let (status, body) = call(&state(None), "POST", "/api/query", Some(deposit_body(json!({"eta": 0.99999})))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(parse(&body)["error"], "infeasible");
}

#[tokio::test]
async fn identical_requests_get_identical_bytes() {
    let s = state(None);
    let (status, first) = call(&s, "POST", "/api/query", Some(deposit_body(json!({"eta": 0.9, "k": 5})))).await;
    assert_eq!(status, StatusCode::OK, "{first}");
    let (_, again) = call(&s, "POST", "/api/query", Some(deposit_body(json!({"k": 5, "eta": 0.9})))).await;
    assert_eq!(first, again);
    // a fresh process computes the same answer
    let (_, fresh) = call(&state(None), "POST", "/api/query", Some(deposit_body(json!({"eta": 0.9, "k": 5})))).await;
    assert_eq!(first, fresh);

    let v = parse(&first);
    let groundings = v["groundings"].as_array().unwrap();
    assert!(!groundings.is_empty() && groundings.len() <= 5);
    assert_eq!(v["result_id"].as_str().unwrap().len(), 16);
    let (_, other) = call(&s, "POST", "/api/query", Some(deposit_body(json!({"eta": 0.9, "k": 3})))).await;
    assert_ne!(parse(&other)["result_id"], v["result_id"]);
}

#[tokio::test]
async fn grounding_detail_accounts_for_the_full_score() {
    let s = state(None);
    let (_, body) = call(&s, "POST", "/api/query", Some(deposit_body(json!({"k": 4})))).await;
    let v = parse(&body);
    let id = v["result_id"].as_str().unwrap();
    let n = v["groundings"].as_array().unwrap().len();
    for rank in 1..=n {
        let (status, detail) = call(&s, "GET", &format!("/api/result/{id}/grounding/{rank}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let d = parse(&detail);
        let full = d["full_log_score"].as_f64().unwrap();
        assert_eq!(full, v["groundings"][rank - 1]["full_log_score"].as_f64().unwrap());
        assert!((d["factor_sum"].as_f64().unwrap() - full).abs() < 1e-9);
        let nodes = d["nodes"].as_array().unwrap();
        assert_eq!(nodes.len(), 4);
        assert!(nodes[0]["factors"][0]["concept"].as_str().unwrap().starts_with("class:"));
        for f in nodes.iter().chain(d["edges"].as_array().unwrap()).flat_map(|x| x["factors"].as_array().unwrap()) {
            let p = f["probability"].as_f64().unwrap();
            assert!((1e-3..=1.0 - 1e-3).contains(&p));
            assert!((p.ln() - f["log_probability"].as_f64().unwrap()).abs() < 1e-12);
        }
        assert_eq!(d["observations"].as_array().unwrap().len(), 4);
    }
    for uri in [
        format!("/api/result/{id}/grounding/0"),
        format!("/api/result/{id}/grounding/{}", n + 1),
        "/api/result/0123456789abcdef/grounding/1".to_string(),
    ] {
        let (status, body) = call(&s, "GET", &uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(parse(&body)["error"], "not_found");
    }
}

#[tokio::test]
async fn summary_echoes_the_frequency_estimate() {
    let store = archive();
    let s = state(None);
    let (status, body) = call(&s, "GET", "/api/archive/summary", None).await;
    assert_eq!(status, StatusCode::OK);
    let v = parse(&body);
    assert_eq!(v["observations"], store.len());
    assert_eq!(v["tracklets"], store.tracklets().len());
    let counted: u64 = v["class_counts"].as_object().unwrap().values().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counted as usize, store.len());
    let freqs = estimate_relationship_frequencies(&store, models(), &FreqOptions::default()).unwrap();
    let expected = serde_json::to_value(&freqs).unwrap();
    for (rel, p) in expected.as_object().unwrap() {
        let got = &v["relationship_frequencies"][rel];
        if let (Some(a), Some(b)) = (p.as_f64(), got.as_f64()) {
            assert!((a - b).abs() < 1e-12, "{rel}");
        } else {
            assert_eq!(got, p, "{rel}");
        }
    }
}

#[tokio::test]
async fn every_query_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("queries.jsonl");
    let s = state(Some(path.clone()));
    let requests = [deposit_body(json!({"k": 2})), "not json".to_string(), deposit_body(json!({"k": 2}))];
    let mut replies = Vec::new();
    for r in &requests {
        replies.push(call(&s, "POST", "/api/query", Some(r.clone())).await);
    }
    let log = s.query_log();
    assert_eq!(log.len(), 3);
    for ((entry, request), (status, reply)) in log.iter().zip(&requests).zip(&replies) {
        assert_eq!(&entry.request, request);
        assert_eq!(entry.status, status.as_u16());
        let sha: String = Sha256::digest(reply.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry.response_sha256, sha);
    }
    assert!(log[1].result_id.is_none());
    assert_eq!(log[0].result_id, log[2].result_id);
    let lines = std::fs::read_to_string(&path).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert_eq!(lines.lines().map(parse).collect::<Vec<_>>(), log.iter().map(|e| serde_json::to_value(e).unwrap()).collect::<Vec<_>>());
}
