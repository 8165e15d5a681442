//! HTTP routing service.
//!
//! Requests read a snapshot of the shared engine; `/admin/reload` builds a
//! new engine off the request path and swaps it in under a write lock, so a
//! request sees either the old or the new index in full.

use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use clap::Args;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};

use dbrouter_core::retrieval::Strategy;

use crate::engine::{parse_strategy, Engine, EngineArgs};
use crate::UsageError;

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default)]
pub struct ServeArgs {
    /// TOML config file; flags and DBROUTER_* variables override it.
    #[arg(long, env = "DBROUTER_CONFIG")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DBROUTER_LISTEN")]
    pub listen: Option<String>,
    /// Results returned when a request gives no top_k.
    #[arg(long, env = "DBROUTER_TOP_K")]
    pub top_k: Option<usize>,
    #[arg(long, env = "DBROUTER_REQUEST_TIMEOUT_MS")]
    pub request_timeout_ms: Option<u64>,
    #[arg(long, env = "DBROUTER_MAX_CONCURRENT")]
    pub max_concurrent: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub top_k: usize,
    pub request_timeout: Duration,
    pub max_concurrent: usize,
    pub engine: EngineArgs,
}

impl ServiceConfig {
    /// Flags (and their env variables) over the config file over defaults.
    pub fn resolve(args: ServeArgs) -> Result<ServiceConfig> {
        let file = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<ServeArgs>(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
            None => ServeArgs::default(),
        };
        let listen = args.listen.or(file.listen).unwrap_or_else(|| "127.0.0.1:8080".into());
        let cfg = ServiceConfig {
            listen: listen
                .parse()
                .map_err(|_| UsageError(format!("bad listen address `{listen}`")))?,
            top_k: args.top_k.or(file.top_k).unwrap_or(3),
            request_timeout: Duration::from_millis(args.request_timeout_ms.or(file.request_timeout_ms).unwrap_or(30_000)),
            max_concurrent: args.max_concurrent.or(file.max_concurrent).unwrap_or(16),
            engine: args.engine.or(file.engine),
        };
        if cfg.top_k == 0 || cfg.max_concurrent == 0 {
            return Err(UsageError("top_k and max_concurrent must be at least 1".into()).into());
        }
        Ok(cfg)
    }
}

pub struct AppState {
    engine: RwLock<Arc<Engine>>,
    args: EngineArgs,
    top_k: usize,
    timeout: Duration,
    permits: Semaphore,
    reload: Mutex<()>,
}

impl AppState {
    pub fn new(engine: Engine, cfg: &ServiceConfig) -> Arc<AppState> {
        Arc::new(AppState {
            engine: RwLock::new(Arc::new(engine)),
            args: cfg.engine.clone(),
            top_k: cfg.top_k,
            timeout: cfg.request_timeout,
            permits: Semaphore::new(cfg.max_concurrent),
            reload: Mutex::new(()),
        })
    }

    fn snapshot(&self) -> Arc<Engine> {
        self.engine.read().expect("engine lock").clone()
    }
}

struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({"error": self.kind, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub question: String,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub question_id: Option<String>,
}

#[derive(Serialize)]
pub struct RoutedDb {
    pub db_id: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub top_tables: Vec<String>,
}

#[derive(Serialize)]
pub struct RouteResponse {
    pub strategy: Strategy,
    pub ranked: Vec<RoutedDb>,
}

async fn route(
    State(st): State<Arc<AppState>>,
    body: Result<Json<RouteRequest>, JsonRejection>,
) -> Result<Json<RouteResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "question is empty"));
    }
    let top_k = req.top_k.unwrap_or(st.top_k);
    if top_k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "top_k must be at least 1"));
    }
    let engine = st.snapshot();
    let strategy = match &req.strategy {
        Some(s) => parse_strategy(s).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?,
        None => engine.strategy,
    };
    let work = async {
        let _permit = st.permits.acquire().await.expect("semaphore never closes");
        let qid = req.question_id.unwrap_or_else(|| "request".into());
        tokio::task::spawn_blocking(move || engine.rank(&qid, &req.question, None, strategy)).await
    };
    let ranked = match tokio::time::timeout(st.timeout, work).await {
        Err(_) => return Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "request timed out")),
        Ok(Err(e)) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
        Ok(Ok(Err(e))) => {
            let status = match e {
                dbrouter_core::retrieval::RetrievalError::NeedsReranker(_)
                | dbrouter_core::retrieval::RetrievalError::UnknownStrategy(_) => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            return Err(ApiError::new(status, "retrieval", e.to_string()));
        }
        Ok(Ok(Ok(r))) => r,
    };
    Ok(Json(RouteResponse {
        strategy: ranked.strategy,
        ranked: ranked
            .top(top_k)
            .iter()
            .map(|e| RoutedDb {
                db_id: e.db_id.clone(),
                score: e.score,
                top_tables: e.top_tables.clone(),
            })
            .collect(),
    }))
}

#[derive(Serialize)]
struct DbInfo {
    db_id: String,
    tables: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_id: Option<String>,
}

async fn databases(State(st): State<Arc<AppState>>) -> Json<Vec<DbInfo>> {
    let engine = st.snapshot();
    let out = engine
        .router
        .index()
        .db_ids()
        .filter_map(|id| engine.corpus.database(id))
        .map(|d| DbInfo {
            db_id: d.db_id().to_string(),
            tables: d.tables().len(),
            cluster_id: d.cluster_id().map(str::to_string),
        })
        .collect();
    Json(out)
}

async fn healthz(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let engine = st.snapshot();
    Json(serde_json::json!({
        "status": "ok",
        "databases": engine.db_count(),
        "provider": engine.router.index().provider(),
        "strategy": engine.strategy,
    }))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ReloadRequest {
    index: Option<PathBuf>,
    manifest: Option<PathBuf>,
}

async fn reload(
    State(st): State<Arc<AppState>>,
    body: axum::body::Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    // An empty body reloads from the paths the service started with.
    let req: ReloadRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReloadRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?
    };
    let _serial = st.reload.lock().await;
    let mut args = st.args.clone();
    if req.index.is_some() {
        args.index = req.index;
    }
    if req.manifest.is_some() {
        args.manifest = req.manifest;
    }
    let fresh = tokio::task::spawn_blocking(move || Engine::load(&args))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "reload", format!("{e:#}")))?;
    let n = fresh.db_count();
    *st.engine.write().expect("engine lock") = Arc::new(fresh);
    log::info!("index reloaded: {n} databases");
    Ok(Json(serde_json::json!({"status": "reloaded", "databases": n})))
}

pub fn app(state: Arc<AppState>) -> axum::Router {
    axum::Router::new()
        .route("/v1/route", post(route))
        .route("/v1/databases", get(databases))
        .route("/healthz", get(healthz))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig::resolve(args)?;
    let engine = Engine::load(&cfg.engine)?;
    let state = AppState::new(engine, &cfg);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        state.snapshot().finish()
    })
}
