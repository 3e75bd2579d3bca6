//! JSON/HTTP service. Sessions live in memory; each sits behind its own
//! mutex so commands on one session run one at a time.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cdl_core::faq::answer;
use cdl_core::parser::{parse_goal, parse_ground_atom};
use cdl_core::portfolio::generated_portfolio;
use cdl_core::reference::{build_reference, REFERENCE_ID};
use cdl_core::simulator::{init_simulation, replay_trace};
use cdl_core::transition::binding_json;
use cdl_core::{BundleSources, Contract, Error, Portfolio, Scenario, SimConfig, SimState, Trace};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

/// Error body: `{"code", "message", "detail"}`. `code` is the engine's own
/// code, or one of `unknown_session`, `unknown_contract`, `bad_request`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.to_string(), message: message.into(), detail: Value::Null }
    }
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::Validation(_) | Error::InvalidConfig(_) | Error::IncompatibleContract(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::UnknownFaq(_) | Error::MissingFile(_) => StatusCode::NOT_FOUND,
        Error::Terminated | Error::ConflictingEffects { .. } | Error::StaleSnapshot { .. } | Error::OverrideMismatch { .. } => {
            StatusCode::CONFLICT
        }
        Error::AmbiguousStatus(_) | Error::NonQuiescent(_) | Error::ResourceLimit(_) | Error::Io(_) | Error::ReplayDivergence { .. } => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        Error::ExternalUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let detail = match &e {
            Error::Validation(d) => serde_json::to_value(d).unwrap_or(Value::Null),
            Error::AmbiguousStatus(labels) => json!(labels),
            Error::ReplayDivergence { round } => json!({ "round": round }),
            _ => Value::Null,
        };
        ApiError { status: status_for(&e), code: e.code().to_string(), message: e.to_string(), detail }
    }
}

impl From<cdl_core::Diagnostic> for ApiError {
    fn from(d: cdl_core::Diagnostic) -> Self {
        Error::Validation(vec![d]).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message, "detail": self.detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct Session {
    pub id: String,
    pub contract_id: String,
    pub sim: SimState,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Default)]
pub struct AppState {
    contracts: RwLock<BTreeMap<String, Arc<Contract>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    /// Directories `POST /portfolio/whatif` may name; empty allows any.
    pub portfolio_roots: Vec<PathBuf>,
}

impl AppState {
    /// State with the reference contract registered as `apa-ref`.
    pub fn with_reference() -> Arc<AppState> {
        let state = AppState::default();
        state.register(build_reference());
        Arc::new(state)
    }

    pub fn register(&self, contract: Contract) -> String {
        let id = contract.id.clone();
        self.contracts.write().expect("contracts lock").insert(id.clone(), Arc::new(contract));
        id
    }

    fn contract(&self, id: &str) -> ApiResult<Arc<Contract>> {
        self.contracts
            .read()
            .expect("contracts lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_contract", format!("no contract `{id}`")))
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/contracts", post(load_contract))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/events", post(send_event))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/faq", get(faq_list))
        .route("/sessions/{id}/faq/{fid}", post(faq_answer))
        .route("/sessions/{id}/trace", get(trace))
        .route("/portfolio/whatif", post(portfolio_whatif))
        .with_state(state)
}

#[derive(Deserialize)]
struct LoadContract {
    id: Option<String>,
    /// File name → text: `contract.cdl`, `facts.cdl`, `clauses.json`,
    /// `faq.json`, `config.json`, `shared.cdl`, or an external fixture.
    files: BTreeMap<String, String>,
}

async fn load_contract(State(state): State<Arc<AppState>>, Json(req): Json<LoadContract>) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut files = req.files;
    let mut sources = BundleSources {
        contract: files.remove("contract.cdl"),
        shared: files.remove("shared.cdl"),
        facts: files.remove("facts.cdl"),
        clauses: files.remove("clauses.json"),
        faq: files.remove("faq.json"),
        config: files.remove("config.json"),
        externals: BTreeMap::new(),
    };
    sources.externals = files;
    let id = req.id.unwrap_or_else(|| format!("contract-{}", state.contracts.read().expect("contracts lock").len() + 1));
    let contract = Contract::from_sources(&id, &sources)?;
    let diagnostics = serde_json::to_value(&contract.diagnostics).unwrap_or(Value::Null);
    let id = state.register(contract);
    Ok((StatusCode::CREATED, Json(json!({ "contract_id": id, "diagnostics": diagnostics }))))
}

#[derive(Deserialize)]
struct StartSession {
    contract_id: Option<String>,
    config: Option<SimConfig>,
    /// JSON-lines trace from `GET /sessions/{id}/trace`; the session is
    /// rebuilt by replaying it, and `config` is ignored.
    trace: Option<String>,
}

async fn start_session(State(state): State<Arc<AppState>>, Json(req): Json<StartSession>) -> ApiResult<(StatusCode, Json<Value>)> {
    let contract_id = req.contract_id.unwrap_or_else(|| REFERENCE_ID.to_string());
    let contract = state.contract(&contract_id)?;
    let sim = if let Some(text) = req.trace {
        replay_trace(contract, &Trace::from_json_lines(&text)?)?
    } else {
        let config = match req.config.or_else(|| contract.config.clone()) {
            Some(c) => c,
            None => return Err(Error::InvalidConfig("no config given and the contract has none".into()).into()),
        };
        init_simulation(contract, config)?
    };
    let n = state.next_session.fetch_add(1, Ordering::SeqCst) + 1;
    let id = format!("s{n}");
    let created_at = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let body = json!({ "session_id": id, "contract_id": contract_id, "state": sim.state_json() });
    let session = Session { id: id.clone(), contract_id, sim, created_at };
    state.sessions.write().expect("sessions lock").insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(s.sim.state_json()))
}

#[derive(Deserialize, Default)]
struct AdvanceBody {
    #[serde(default)]
    times: Option<usize>,
}

/// The body is optional, so an empty one is accepted whatever its content type.
async fn advance(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let times = if body.iter().all(u8::is_ascii_whitespace) {
        1
    } else {
        serde_json::from_slice::<AdvanceBody>(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?
            .times
            .unwrap_or(1)
    };
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    for _ in 0..times {
        s.sim.advance()?;
    }
    Ok(Json(s.sim.state_json()))
}

#[derive(Deserialize)]
struct EventBody {
    event: String,
    /// Hold the event for the next advance instead of delivering it now.
    #[serde(default)]
    queue: bool,
}

async fn send_event(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<EventBody>) -> ApiResult<Json<Value>> {
    let event = parse_ground_atom(&req.event)?;
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    if req.queue {
        s.sim.queue_event(event)?;
    } else {
        s.sim.send_event(event)?;
    }
    Ok(Json(s.sim.state_json()))
}

#[derive(Deserialize)]
struct QueryBody {
    goal: String,
    #[serde(default)]
    proofs: bool,
}

async fn query(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<QueryBody>) -> ApiResult<Json<Value>> {
    let goal = parse_goal(&req.goal)?;
    let session = state.session(&id)?;
    let s = session.lock().await;
    let answers = s.sim.evaluator().derive_with_proof(&s.sim.store, &goal)?;
    let bindings: Vec<Value> = answers.iter().map(|(b, _)| binding_json(b)).collect();
    let mut body = json!({ "bindings": bindings });
    if req.proofs {
        body["proofs"] = Value::Array(answers.iter().map(|(_, d)| d.to_json()).collect());
    }
    Ok(Json(body))
}

async fn faq_list(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(Value::Array(s.sim.contract.faqs.iter().map(|f| f.to_json()).collect())))
}

async fn faq_answer(State(state): State<Arc<AppState>>, Path((id, fid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let a = answer(&s.sim.contract, s.sim.evaluator(), &s.sim.store, &fid)?;
    let mut body = a.to_json();
    if let Some(map) = &s.sim.contract.program.clause_map {
        body["clauses"] = Value::Array(
            map.entries
                .iter()
                .filter(|e| a.clause_links.iter().any(|c| &**c == e.id))
                .map(|e| json!({ "id": e.id, "text": e.text }))
                .collect(),
        );
    }
    Ok(Json(body))
}

async fn trace(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let text = s.sim.export_trace().to_json_lines();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

#[derive(Deserialize)]
struct WhatifBody {
    /// Directory of bundles; or `generate` instances instead.
    portfolio: Option<PathBuf>,
    generate: Option<GenerateSpec>,
    /// Scenario in the scenario-file format; or `payment_increase_bp`.
    scenario: Option<Value>,
    payment_increase_bp: Option<i64>,
    goal: String,
}

#[derive(Deserialize)]
struct GenerateSpec {
    count: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize, Default)]
struct WhatifParams {
    format: Option<String>,
}

async fn portfolio_whatif(
    State(state): State<Arc<AppState>>,
    Query(params): Query<WhatifParams>,
    Json(req): Json<WhatifBody>,
) -> ApiResult<Response> {
    let goal = parse_goal(&req.goal)?;
    let scenario = match (&req.scenario, req.payment_increase_bp) {
        (Some(v), _) => Scenario::from_json(&v.to_string())?,
        (None, Some(bp)) => Scenario::payment_increase(bp),
        (None, None) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "give `scenario` or `payment_increase_bp`")),
    };
    let portfolio = match (req.portfolio, req.generate) {
        (Some(dir), _) => {
            if !state.portfolio_roots.is_empty() && !state.portfolio_roots.iter().any(|r| dir.starts_with(r)) {
                return Err(ApiError::new(StatusCode::FORBIDDEN, "bad_request", "portfolio directory is outside the served roots"));
            }
            tokio::task::spawn_blocking(move || Portfolio::load_dir(&dir))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??
        }
        (None, Some(g)) => tokio::task::spawn_blocking(move || generated_portfolio(g.count, g.seed))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?,
        (None, None) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "give `portfolio` or `generate`")),
    };
    let report = portfolio.whatif(&scenario, &goal);
    if params.format.as_deref() == Some("csv") {
        return Ok(([(header::CONTENT_TYPE, "text/csv")], report.to_csv()?).into_response());
    }
    let mut body = report.to_json();
    body["load_failures"] = json!(portfolio
        .failures
        .iter()
        .map(|(id, d)| (id.clone(), serde_json::to_value(d).unwrap_or(Value::Null)))
        .collect::<BTreeMap<_, _>>());
    Ok(Json(body).into_response())
}
