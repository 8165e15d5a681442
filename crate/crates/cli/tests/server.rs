use std::path::PathBuf;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use dbrouter_cli::engine::{EmbedArgs, Engine, EngineArgs};
use dbrouter_cli::server::{app, AppState, ServeArgs, ServiceConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn engine_args() -> EngineArgs {
    EngineArgs {
        manifest: Some(fixtures().join("toy")),
        embed: EmbedArgs {
            provider: Some("test:64:0".into()),
            ..EmbedArgs::default()
        },
        llm: Some("mock:reverse".into()),
        ..EngineArgs::default()
    }
}

fn router() -> axum::Router {
    let cfg = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        top_k: 2,
        request_timeout: Duration::from_secs(10),
        max_concurrent: 4,
        engine: engine_args(),
    };
    let engine = Engine::load(&cfg.engine).unwrap();
    app(AppState::new(engine, &cfg))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn route_endpoint() {
    let app = router();
    let (s, v) = call(&app, "POST", "/v1/route", Some(json!({"question": "How many singers are there?"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["strategy"], "pooled-tables");
    assert_eq!(v["ranked"].as_array().unwrap().len(), 2);
    assert!(v["ranked"][0]["top_tables"].is_array());

    let body = json!({"question": "How many singers are there?", "top_k": 3, "strategy": "llm-rerank"});
    let (s, v) = call(&app, "POST", "/v1/route", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["strategy"], "llm-rerank");
    assert_eq!(v["ranked"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn route_rejects_bad_requests() {
    let app = router();
    for body in [
        json!({"question": ""}),
        json!({"question": "q", "top_k": 0}),
        json!({"question": "q", "strategy": "best"}),
        json!({"question": "q", "extra": 1}),
        json!({"text": "q"}),
    ] {
        let (s, v) = call(&app, "POST", "/v1/route", Some(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["message"].is_string());
    }
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let app = router();
    let body = json!({"question": "Which airlines fly from airports in the US?", "top_k": 3});
    let mut handles = Vec::new();
    for _ in 0..16 {
        let (app, body) = (app.clone(), body.clone());
        handles.push(tokio::spawn(async move { call(&app, "POST", "/v1/route", Some(body)).await }));
    }
    let mut seen = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        seen.push(v.to_string());
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn listing_health_and_reload() {
    let app = router();
    let (s, v) = call(&app, "GET", "/v1/databases", None).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|d| d["db_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["concert_singer", "flight_2", "pets_1"]);
    assert_eq!(v[0]["cluster_id"], "music");

    let (s, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["databases"], 3);

    let (s, v) = call(&app, "POST", "/admin/reload", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["databases"], 3);

    let (s, _) = call(&app, "POST", "/admin/reload", Some(json!({"manifest": "/no/such/dir"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    // The failed reload left the old engine in place.
    let (s, _) = call(&app, "POST", "/v1/route", Some(json!({"question": "pets"}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("serve.toml");
    std::fs::write(&path, "listen = \"127.0.0.1:9000\"\ntop_k = 5\nprovider = \"test:8:0\"\n").unwrap();
    let args = ServeArgs {
        config: Some(path),
        top_k: Some(7),
        ..ServeArgs::default()
    };
    let cfg = ServiceConfig::resolve(args).unwrap();
    assert_eq!(cfg.listen.port(), 9000);
    assert_eq!(cfg.top_k, 7);
    assert_eq!(cfg.max_concurrent, 16);
    assert_eq!(cfg.engine.embed.provider.as_deref(), Some("test:8:0"));

    let bad = ServeArgs {
        listen: Some("nowhere".into()),
        ..ServeArgs::default()
    };
    assert!(ServiceConfig::resolve(bad).is_err());
}
