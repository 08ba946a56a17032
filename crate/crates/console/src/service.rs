//! HTTP API over one loaded archive and model bundle.
//!
//! | method | path                                   | body / reply                         |
//! |--------|----------------------------------------|--------------------------------------|
//! | POST   | `/api/query`                           | query document plus options; result  |
//! | GET    | `/api/archive/summary`                 | counts, time span, frequencies       |
//! | GET    | `/api/result/{id}/grounding/{rank}`    | per-factor breakdown of one return   |
//! | GET    | `/api/health`                          | liveness                             |
//!
//! Errors reply `{"error": <kind>, "detail": <message>}`; invalid queries add
//! `"violations"`. Results stay in a 64-entry LRU keyed by a hash of the
//! canonical request, so the same request always gets the same `result_id`
//! and the same bytes back.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use actgraph::archive::{estimate_relationship_frequencies, FreqOptions};
use actgraph::matcher::{MatchError, ResultDocument};
use actgraph::planner::PlanError;
use actgraph::querymodel::{parse_activity_graph, serialize_activity_graph, QueryError, Violation};
use actgraph::{
    retrieve, ActivityGraph, ArchiveStore, BBox, CalibrationModel, NodeClass, RelFreqTable, RetrievalConfig, Scorer,
};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use lru::LruCache;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub const CACHE_SIZE: usize = 64;

/// Option keys accepted next to `nodes` and `edges` in a query body.
const OPTION_KEYS: [&str; 6] = ["eta", "k", "top_r", "rounds", "decay", "reid"];

struct Loaded {
    store: ArchiveStore,
    /// `None` when the archive is too small to sample pairs from.
    freqs: Option<RelFreqTable>,
}

/// A served result, kept for the detail endpoint.
struct Stored {
    graph: ActivityGraph,
    config: RetrievalConfig,
    document: ResultDocument,
    body: String,
}

/// One line of the query log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: f64,
    /// Request body exactly as received.
    pub request: String,
    pub status: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_id: Option<String>,
    pub returned: usize,
    pub refinement_rounds: usize,
    /// Hex SHA-256 of the response body.
    pub response_sha256: String,
}

#[derive(Default)]
struct QueryLog {
    entries: Vec<LogEntry>,
    file: Option<File>,
}

struct Inner {
    archive: Option<Loaded>,
    models: CalibrationModel,
    cache: Mutex<LruCache<String, Arc<Stored>>>,
    log: Mutex<QueryLog>,
}

/// Immutable archive and models plus the result cache and query log.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// `log` is appended to, never truncated.
    pub fn new(archive: Option<ArchiveStore>, models: CalibrationModel, log: Option<PathBuf>) -> Result<Self, String> {
        let archive = match archive {
            Some(store) => {
                let freqs = if store.len() >= 2 {
                    Some(estimate_relationship_frequencies(&store, &models, &FreqOptions::default()).map_err(|e| e.to_string())?)
                } else {
                    None
                };
                Some(Loaded { store, freqs })
            }
            None => None,
        };
        let file = log
            .map(|p| {
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| format!("{}: {e}", p.display()))
            })
            .transpose()?;
        Ok(Self {
            inner: Arc::new(Inner {
                archive,
                models,
                cache: Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_SIZE).unwrap())),
                log: Mutex::new(QueryLog {
                    entries: Vec::new(),
                    file,
                }),
            }),
        })
    }

    /// Query log entries of this process, oldest first.
    pub fn query_log(&self) -> Vec<LogEntry> {
        self.inner.log.lock().unwrap().entries.clone()
    }

    fn record(&self, entry: LogEntry) {
        let mut log = self.inner.log.lock().unwrap();
        if let Some(f) = log.file.as_mut() {
            let line = serde_json::to_string(&entry).expect("log entries serialize");
            if let Err(e) = writeln!(f, "{line}") {
                eprintln!("query log: {e}");
            }
        }
        log.entries.push(entry);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/query", post(post_query))
        .route("/api/archive/summary", get(archive_summary))
        .route("/api/result/{id}/grounding/{rank}", get(grounding_detail))
        .route("/api/health", get(health))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr, assets: Option<PathBuf>) -> std::io::Result<()> {
    let mut app = router(state);
    if let Some(dir) = assets {
        app = app.fallback_service(tower_http::services::ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, kind: &str, detail: impl Into<String>) -> Response {
    let body = json!({"error": kind, "detail": detail.into()});
    json_response(status, body.to_string())
}

fn invalid_query(detail: String, violations: &[Violation]) -> Response {
    let body = json!({"error": "invalid_query", "detail": detail, "violations": violations});
    json_response(StatusCode::BAD_REQUEST, body.to_string())
}

/// Splits a request body into the query document and the retrieval options.
fn parse_request(body: &[u8]) -> Result<(ActivityGraph, RetrievalConfig), Response> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| invalid_query(format!("body is not valid JSON: {e}"), &[]))?;
    let Value::Object(mut object) = value else {
        return Err(invalid_query("body must be a JSON object".into(), &[]));
    };
    let mut options = Map::new();
    for key in OPTION_KEYS {
        if let Some(v) = object.remove(key) {
            options.insert(key.to_string(), v);
        }
    }
    let config = options_to_config(&options).map_err(|detail| invalid_query(detail, &[]))?;
    let document = Value::Object(object).to_string();
    let graph = parse_activity_graph(&document).map_err(|e| match e {
        QueryError::Invalid(violations) => {
            let detail = QueryError::Invalid(violations.clone()).to_string();
            invalid_query(detail, &violations)
        }
        other => invalid_query(other.to_string(), &[]),
    })?;
    Ok((graph, config))
}

fn options_to_config(options: &Map<String, Value>) -> Result<RetrievalConfig, String> {
    let mut config = RetrievalConfig::default();
    let number = |key: &str| -> Result<Option<f64>, String> {
        options
            .get(key)
            .map(|v| v.as_f64().ok_or_else(|| format!("'{key}' must be a number")))
            .transpose()
    };
    let count = |key: &str| -> Result<Option<usize>, String> {
        options
            .get(key)
            .map(|v| v.as_u64().map(|n| n as usize).ok_or_else(|| format!("'{key}' must be a non-negative integer")))
            .transpose()
    };
    if let Some(eta) = number("eta")? {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(format!("eta {eta} is not in (0, 1]"));
        }
        config.eta = eta;
    }
    if let Some(decay) = number("decay")? {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(format!("decay {decay} is not in (0, 1)"));
        }
        config.decay = decay;
    }
    if let Some(k) = count("k")? {
        config.k = k;
    }
    if let Some(r) = count("top_r")? {
        if r == 0 {
            return Err("top_r must be at least 1".into());
        }
        config.top_r = r;
    }
    if let Some(rounds) = count("rounds")? {
        config.rounds = rounds;
    }
    if let Some(v) = options.get("reid") {
        config.reid = v.as_bool().ok_or("'reid' must be a boolean")?;
    }
    Ok(config)
}

fn request_id(graph: &ActivityGraph, config: &RetrievalConfig) -> String {
    let mut h = Sha256::new();
    h.update(serialize_activity_graph(graph).as_bytes());
    h.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

async fn post_query(State(state): State<AppState>, body: Bytes) -> Response {
    let (response, stored) = run_query(&state, &body).await;
    let (result_id, returned, rounds) = match &stored {
        Some(s) => (Some(request_id(&s.graph, &s.config)), s.document.groundings.len(), s.document.refinement_rounds),
        None => (None, 0, 0),
    };
    let (parts, inner) = response.into_parts();
    let bytes = axum::body::to_bytes(inner, usize::MAX).await.unwrap_or_default();
    state.record(LogEntry {
        timestamp: now(),
        request: String::from_utf8_lossy(&body).into_owned(),
        status: parts.status.as_u16(),
        result_id,
        returned,
        refinement_rounds: rounds,
        response_sha256: sha256_hex(&bytes),
    });
    Response::from_parts(parts, axum::body::Body::from(bytes))
}

async fn run_query(state: &AppState, body: &[u8]) -> (Response, Option<Arc<Stored>>) {
    let (graph, config) = match parse_request(body) {
        Ok(x) => x,
        Err(r) => return (r, None),
    };
    if state.inner.archive.is_none() {
        return (error(StatusCode::CONFLICT, "no_archive", "no archive is loaded"), None);
    }
    let id = request_id(&graph, &config);
    if let Some(hit) = state.inner.cache.lock().unwrap().get(&id).cloned() {
        return (json_response(StatusCode::OK, hit.body.clone()), Some(hit));
    }
    let worker = state.clone();
    let task = tokio::task::spawn_blocking(move || {
        let loaded = worker.inner.archive.as_ref().expect("checked above");
        let uniform = RelFreqTable::uniform();
        let freqs = loaded.freqs.as_ref().unwrap_or(&uniform);
        retrieve(&graph, &loaded.store, &worker.inner.models, freqs, &config).map(|r| (graph, r))
    });
    let (graph, result) = match task.await {
        Ok(Ok(x)) => x,
        Ok(Err(e)) => return (match_error(e), None),
        Err(e) => return (error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()), None),
    };
    let document = result.document();
    let mut reply = serde_json::to_value(&document).expect("documents serialize");
    reply["result_id"] = Value::String(id.clone());
    let body = reply.to_string();
    let stored = Arc::new(Stored {
        graph,
        config,
        document,
        body: body.clone(),
    });
    state.inner.cache.lock().unwrap().put(id, stored.clone());
    (json_response(StatusCode::OK, body), Some(stored))
}

fn match_error(e: MatchError) -> Response {
    match e {
        MatchError::Plan(p @ (PlanError::Infeasible { .. } | PlanError::BadEta(_))) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, "infeasible", p.to_string())
        }
        MatchError::Plan(PlanError::InvalidGraph(v)) => invalid_query("invalid activity graph".into(), &v),
        MatchError::NoStats => error(StatusCode::UNPROCESSABLE_ENTITY, "infeasible", MatchError::NoStats.to_string()),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    }
}

/// Most likely class of an observation by raw margin.
fn likely_class(o: &actgraph::Observation) -> Option<NodeClass> {
    NodeClass::ALL
        .iter()
        .filter_map(|c| o.class_margins.get(c.as_str()).map(|m| (*c, *m)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| c)
}

async fn archive_summary(State(state): State<AppState>) -> Response {
    let Some(loaded) = &state.inner.archive else {
        return error(StatusCode::CONFLICT, "no_archive", "no archive is loaded");
    };
    let store = &loaded.store;
    let mut classes: BTreeMap<&str, usize> = NodeClass::ALL.iter().map(|c| (c.as_str(), 0)).collect();
    for o in store.observations() {
        if let Some(c) = likely_class(o) {
            *classes.get_mut(c.as_str()).unwrap() += 1;
        }
    }
    let body = json!({
        "observations": store.len(),
        "tracklets": store.tracklets().len(),
        "class_counts": classes,
        "time_span": store.time_span(),
        "relationship_frequencies": loaded.freqs,
    });
    json_response(StatusCode::OK, body.to_string())
}

#[derive(Serialize)]
struct Factor {
    concept: String,
    probability: f64,
    log_probability: f64,
}

#[derive(Serialize)]
struct NodeDetail {
    node: String,
    obs_id: u64,
    factors: Vec<Factor>,
    log_probability: f64,
}

#[derive(Serialize)]
struct EdgeDetail {
    a: String,
    b: String,
    factors: Vec<Factor>,
    log_probability: f64,
}

#[derive(Serialize)]
struct Member {
    node: String,
    obs_id: u64,
    track_id: u64,
    time: f64,
    #[serde(rename = "box")]
    bbox: BBox,
}

#[derive(Serialize)]
struct GroundingDetail {
    result_id: String,
    rank: usize,
    full_log_score: f64,
    mapping: BTreeMap<String, u64>,
    nodes: Vec<NodeDetail>,
    edges: Vec<EdgeDetail>,
    factor_sum: f64,
    observations: Vec<Member>,
}

fn factors(names: impl Iterator<Item = String>, ps: Vec<f64>) -> (Vec<Factor>, f64) {
    let fs: Vec<Factor> = names
        .zip(ps)
        .map(|(concept, p)| Factor {
            concept,
            probability: p,
            log_probability: p.ln(),
        })
        .collect();
    let sum = fs.iter().map(|f| f.log_probability).sum();
    (fs, sum)
}

async fn grounding_detail(State(state): State<AppState>, Path((id, rank)): Path<(String, usize)>) -> Response {
    let Some(stored) = state.inner.cache.lock().unwrap().get(&id).cloned() else {
        return error(StatusCode::NOT_FOUND, "not_found", format!("no result '{id}'"));
    };
    let Some(g) = rank.checked_sub(1).and_then(|i| stored.document.groundings.get(i)) else {
        return error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("result '{id}' has {} groundings; rank {rank} does not exist", stored.document.groundings.len()),
        );
    };
    let loaded = state.inner.archive.as_ref().expect("results exist only with an archive");
    let scorer = Scorer::new(&loaded.store, &state.inner.models).with_reid(stored.config.reid);
    let obs = |node: &str| loaded.store.get(g.mapping[node]).expect("grounded observations exist");
    let detail = (|| -> Result<GroundingDetail, actgraph::concepts::ConceptError> {
        let mut nodes = Vec::new();
        let mut members = Vec::new();
        for n in &stored.graph.nodes {
            let o = obs(&n.id);
            let names = std::iter::once(format!("class:{}", n.class)).chain(n.attributes.iter().map(|a| format!("attr:{a}")));
            let (fs, lp) = factors(names, scorer.node_factors(n, o)?);
            nodes.push(NodeDetail {
                node: n.id.clone(),
                obs_id: o.obs_id,
                factors: fs,
                log_probability: lp,
            });
            members.push(Member {
                node: n.id.clone(),
                obs_id: o.obs_id,
                track_id: o.track_id,
                time: o.time,
                bbox: o.bbox,
            });
        }
        let mut edges = Vec::new();
        for e in &stored.graph.edges {
            let names = e.relationships.iter().map(|r| format!("rel:{r}"));
            let (fs, lp) = factors(names, scorer.edge_factors(&e.relationships, obs(&e.a), obs(&e.b))?);
            edges.push(EdgeDetail {
                a: e.a.clone(),
                b: e.b.clone(),
                factors: fs,
                log_probability: lp,
            });
        }
        let factor_sum =
            nodes.iter().map(|n| n.log_probability).sum::<f64>() + edges.iter().map(|e| e.log_probability).sum::<f64>();
        Ok(GroundingDetail {
            result_id: id.clone(),
            rank,
            full_log_score: g.full_log_score,
            mapping: g.mapping.clone(),
            nodes,
            edges,
            factor_sum,
            observations: members,
        })
    })();
    match detail {
        Ok(d) => json_response(StatusCode::OK, serde_json::to_string(&d).expect("details serialize")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    let body = json!({
        "status": "ok",
        "archive_loaded": state.inner.archive.is_some(),
    });
    json_response(StatusCode::OK, body.to_string())
}
