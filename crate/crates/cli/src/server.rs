//! HTTP + WebSocket service.
//!
//! Every error body has the shape `{"error": {"kind", "field", "message"}}`.

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State, WebSocketUpgrade};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use levlab::controllers::{LeadLagParams, PidGains};
use levlab::experiment::{run_experiment, ControllerSpec, ExperimentConfig, PlantSource, Preset, RunStore};
use levlab::lti::{default_gain_schedule, log_gain_schedule, root_locus, TransferFunction};
use levlab::plant::{paper_plant, PlantParameters};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::session;

#[derive(Clone)]
pub struct AppState {
    pub store: RunStore,
    pub(crate) next_session: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(store: RunStore) -> Self {
        AppState {
            store,
            next_session: Arc::new(AtomicU64::new(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl ErrorBody {
    pub fn new(kind: &str, field: Option<String>, message: impl Into<String>) -> Self {
        ErrorBody {
            kind: kind.into(),
            field,
            message: message.into(),
        }
    }

    pub fn from_core(e: &levlab::Error, default_field: Option<&str>) -> (StatusCode, Self) {
        let field = e.field().or(default_field).map(String::from);
        let (status, kind) = match e {
            levlab::Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            e if e.is_validation() => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "simulation"),
        };
        (status, ErrorBody::new(kind, field, e.to_string()))
    }
}

pub struct ApiError(StatusCode, ErrorBody);

impl From<levlab::Error> for ApiError {
    fn from(e: levlab::Error) -> Self {
        let (s, b) = ErrorBody::from_core(&e, None);
        ApiError(s, b)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

/// Deserialize with the path of the offending field kept.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ErrorBody> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ErrorBody::new("parse", field, e.into_inner().to_string())
    })
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    parse_body(body).map_err(|b| ApiError(StatusCode::BAD_REQUEST, b))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/plant", get(plant))
        .route("/api/simulate", post(simulate))
        .route("/api/rootlocus", post(rootlocus))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/session", get(session_upgrade))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn tf_json(g: &TransferFunction) -> Result<Value, ApiError> {
    Ok(json!({ "num": g.num().coeffs(), "den": g.den().coeffs(), "poles": g.poles()? }))
}

async fn plant() -> Result<Json<Value>, ApiError> {
    let g = paper_plant();
    let params = PlantParameters::paper_reported();
    let presets: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
    Ok(Json(json!({
        "transfer_function": tf_json(&g)?,
        "params": params,
        "presets": presets,
        "defaults": { "pid": PidGains::paper(), "leadlag": LeadLagParams::paper() },
    })))
}

async fn simulate(body: Bytes) -> Result<Json<Value>, ApiError> {
    let cfg: ExperimentConfig = parse(&body)?;
    let out = tokio::task::spawn_blocking(move || run_experiment(&cfg))
        .await
        .map_err(|e| levlab::Error::Io(e.to_string()))??;
    Ok(Json(serde_json::to_value(out).expect("outcome serializes")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainRange {
    lo: f64,
    hi: f64,
    n: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RootLocusRequest {
    plant: PlantSource,
    /// unity when absent
    controller: Option<ControllerSpec>,
    gains: Option<GainRange>,
}

async fn rootlocus(body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: RootLocusRequest = if body.is_empty() { RootLocusRequest::default() } else { parse(&body)? };
    let plant = req.plant.transfer_function()?;
    let ctrl = match &req.controller {
        Some(c) => c.transfer_function()?,
        None => TransferFunction::gain(1.0),
    };
    let gains = match req.gains {
        Some(g) => log_gain_schedule(g.lo, g.hi, g.n).map_err(|e| {
            let (s, mut b) = ErrorBody::from_core(&e, None);
            b.field = Some("gains".into());
            ApiError(s, b)
        })?,
        None => default_gain_schedule(),
    };
    let l = ctrl.series(&plant);
    let branches = root_locus(&l, &gains)?;
    Ok(Json(json!({
        "open_loop": tf_json(&l)?,
        "gains": gains,
        "branches": branches.iter().map(|b| json!({ "points": b.points })).collect::<Vec<_>>(),
    })))
}

async fn list_runs(State(st): State<AppState>) -> Result<Json<Value>, ApiError> {
    let store = st.store.clone();
    let runs = tokio::task::spawn_blocking(move || store.list())
        .await
        .map_err(|e| levlab::Error::Io(e.to_string()))??;
    Ok(Json(serde_json::to_value(runs).expect("records serialize")))
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    match st.store.load(&id) {
        Ok(rec) => Ok(Json(serde_json::to_value(rec).expect("record serializes"))),
        Err(levlab::Error::Io(_)) => Err(ApiError(
            StatusCode::NOT_FOUND,
            ErrorBody::new("not_found", Some("id".into()), format!("no run `{id}`")),
        )),
        Err(e) => Err(e.into()),
    }
}

async fn session_upgrade(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| session::run(socket, st))
}
