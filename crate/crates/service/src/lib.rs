//! Read-only HTTP API over prepared anomaly datasets and lag-model banks.
//!
//! All state is loaded once by [`ServiceState::load`] and never mutated, so
//! handlers can run concurrently and identical requests get identical bodies
//! (apart from the `timing` block of scenario responses).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use fdtkit::dataio::AnomalyDataset;
use fdtkit::emulator::LagModelBank;
use fdtkit::eval::{OodModel, DEFAULT_OOD_COMPONENTS};
use fdtkit::fdt::{emulator_response, ResponseEstimate};
use fdtkit::grid::{build_icosphere, IcoMesh};
use fdtkit::scenario::{self, FieldProblem, PerturbationScenario};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8642;
/// Training states used to fit each dataset's OOD model.
pub const OOD_FIT_SAMPLES: usize = 1000;

/// Artifacts to load, each under a stable identifier.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub datasets: Vec<(String, PathBuf)>,
    pub banks: Vec<(String, PathBuf)>,
    /// Directory of the web bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
    pub ood_components: Option<usize>,
    pub seed: u64,
}

pub struct DatasetEntry {
    pub anomalies: AnomalyDataset,
    pub ood: OodModel,
}

pub struct ServiceState {
    pub mesh: IcoMesh,
    pub datasets: BTreeMap<String, DatasetEntry>,
    pub banks: BTreeMap<String, LagModelBank>,
    pub static_dir: Option<PathBuf>,
}

impl ServiceState {
    pub fn load(config: &ServiceConfig) -> fdtkit::Result<Self> {
        let mut datasets = BTreeMap::new();
        for (id, path) in &config.datasets {
            let anomalies = AnomalyDataset::load(path)?;
            datasets.insert(id.clone(), anomalies);
        }
        let mut banks = BTreeMap::new();
        for (id, path) in &config.banks {
            banks.insert(id.clone(), LagModelBank::load(path)?);
        }
        Self::new(datasets, banks, config.ood_components.unwrap_or(DEFAULT_OOD_COMPONENTS), config.seed)
            .map(|s| Self {
                static_dir: config.static_dir.clone(),
                ..s
            })
    }

    /// Builds the state from in-memory artifacts, which must share one mesh level.
    pub fn new(
        datasets: BTreeMap<String, AnomalyDataset>,
        banks: BTreeMap<String, LagModelBank>,
        ood_components: usize,
        seed: u64,
    ) -> fdtkit::Result<Self> {
        if datasets.is_empty() {
            return Err(fdtkit::Error::Validation("the service needs at least one dataset".into()));
        }
        let level = datasets.values().next().expect("non-empty").data().mesh_level();
        let levels = datasets
            .values()
            .map(|d| d.data().mesh_level())
            .chain(banks.values().map(|b| b.mesh_level()));
        if let Some(other) = levels.into_iter().find(|&l| l != level) {
            return Err(fdtkit::Error::Validation(format!(
                "all artifacts must share one mesh level (found {level} and {other})"
            )));
        }
        let datasets = datasets
            .into_iter()
            .map(|(id, anomalies)| {
                let total = anomalies.data().members() * anomalies.data().months();
                let states = scenario::physical_fluctuations(&anomalies, total.min(OOD_FIT_SAMPLES), seed)?;
                let k = ood_components.min(states.len() - 1).min(states[0].len());
                let ood = OodModel::fit(&states, k)?;
                Ok((id, DatasetEntry { anomalies, ood }))
            })
            .collect::<fdtkit::Result<_>>()?;
        Ok(Self {
            mesh: build_icosphere(level)?,
            datasets,
            banks,
            static_dir: None,
        })
    }
}

/// Structured error body: `{"error": {"code", "message", "fields"}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub fields: Vec<FieldProblem>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            fields: Vec::new(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn bad_request(message: impl Into<String>, fields: Vec<FieldProblem>) -> Self {
        Self {
            fields,
            ..Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
        }
    }
}

impl From<fdtkit::Error> for ApiError {
    fn from(e: fdtkit::Error) -> Self {
        let status = match e.category() {
            "validation" | "shape" | "non_finite" => StatusCode::BAD_REQUEST,
            "out_of_range" => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.category(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message, "fields": self.fields } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<ServiceState>;

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/meta", get(meta))
        .route("/api/field", get(field))
        .route("/api/scenario", post(run_scenario))
        .route("/api/ood/background", get(ood_background))
        .route("/api/{*rest}", any(|| async { ApiError::not_found("no such endpoint") }))
        .fallback(|| async { ApiError::not_found("no such endpoint") });
    let api = match &state.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: ServiceState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn meta(State(state): State<Shared>) -> Json<Value> {
    let datasets: Vec<Value> = state
        .datasets
        .iter()
        .map(|(id, e)| {
            let d = e.anomalies.data();
            json!({
                "id": id,
                "members": d.members(),
                "months": d.months(),
                "start_month": d.start_month(),
                "channels": d.channels(),
                "standardized": e.anomalies.norm_stats().is_some(),
            })
        })
        .collect();
    let banks: Vec<Value> = state
        .banks
        .iter()
        .map(|(id, b)| {
            json!({
                "id": id,
                "kind": b.kind(),
                "lags": b.lags(),
                "input_channels": b.shape().input_channels,
                "output_channels": b.shape().output_channels,
            })
        })
        .collect();
    Json(json!({
        "mesh_level": state.mesh.level(),
        "nodes": state.mesh.len(),
        "datasets": datasets,
        "banks": banks,
        "presets": scenario::presets(),
        "defaults": {
            "samples": scenario::DEFAULT_SAMPLES,
            "rule": fdtkit::fdt::IntegrationRule::InterpQuadratic,
            "seed": fdtkit::DEFAULT_SEED,
        },
    }))
}

fn pick<'a, T>(map: &'a BTreeMap<String, T>, id: Option<&str>, what: &str) -> ApiResult<(&'a String, &'a T)> {
    match id {
        Some(id) => map
            .get_key_value(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown {what} {id:?}"))),
        None if map.len() == 1 => Ok(map.iter().next().expect("one entry")),
        None => Err(ApiError::bad_request(
            format!("{} {what}s are loaded; name one", map.len()),
            vec![FieldProblem {
                field: what.into(),
                message: format!("required, one of {:?}", map.keys().collect::<Vec<_>>()),
            }],
        )),
    }
}

#[derive(Debug, Deserialize)]
struct FieldQuery {
    dataset: Option<String>,
    member: usize,
    time: usize,
    channel: String,
}

async fn field(State(state): State<Shared>, query: Result<Query<FieldQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<Json<Value>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text(), Vec::new()))?;
    let (id, entry) = pick(&state.datasets, q.dataset.as_deref(), "dataset")?;
    let d = entry.anomalies.data();
    if q.member >= d.members() {
        return Err(ApiError::not_found(format!("member {} is out of range (dataset has {})", q.member, d.members())));
    }
    if q.time >= d.months() {
        return Err(ApiError::not_found(format!("time {} is out of range (dataset has {} months)", q.time, d.months())));
    }
    let c = d
        .channel_index(&q.channel)
        .ok_or_else(|| ApiError::not_found(format!("dataset has no channel {:?}", q.channel)))?;
    let spec = &d.channels()[c];
    let (mean, std) = entry
        .anomalies
        .norm_stats()
        .and_then(|s| s.get(&spec.name))
        .map_or((0.0, 1.0), |n| (n.mean, n.std));
    let values: Vec<f64> = (0..d.nodes()).map(|n| d.value(q.member, q.time, n, c) as f64 * std + mean).collect();
    Ok(Json(json!({
        "dataset": id,
        "member": q.member,
        "time": q.time,
        "calendar_month": d.calendar_month(q.time),
        "channel": spec.name,
        "units": spec.units,
        "values": values,
        "lat": state.mesh.lat(),
        "lon": state.mesh.lon(),
    })))
}

#[derive(Debug, Deserialize)]
struct BackgroundQuery {
    dataset: Option<String>,
}

async fn ood_background(State(state): State<Shared>, Query(q): Query<BackgroundQuery>) -> ApiResult<Json<Value>> {
    let (id, entry) = pick(&state.datasets, q.dataset.as_deref(), "dataset")?;
    Ok(Json(json!({
        "dataset": id,
        "components": entry.ood.k,
        "variances": entry.ood.variances,
        "median_distance": entry.ood.median,
        "points": entry.ood.background,
    })))
}

/// Request keys that select artifacts and output options; everything else
/// must be a scenario file field.
const CONTROL_KEYS: [&str; 3] = ["bank", "dataset", "include_contributions"];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Controls {
    bank: Option<String>,
    dataset: Option<String>,
    #[serde(default)]
    include_contributions: bool,
}

/// Field name quoted in a serde message such as "unknown field `x`".
fn quoted_field(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn parse_request(body: Value) -> ApiResult<(Controls, PerturbationScenario)> {
    let Value::Object(mut map) = body else {
        return Err(ApiError::bad_request("scenario body must be a JSON object", Vec::new()));
    };
    let mut controls = Map::new();
    for key in CONTROL_KEYS {
        if let Some(v) = map.remove(key) {
            controls.insert(key.into(), v);
        }
    }
    let controls: Controls = serde_json::from_value(Value::Object(controls)).map_err(|e| {
        let msg = e.to_string();
        let field = quoted_field(&msg).unwrap_or_else(|| "request".into());
        ApiError::bad_request(format!("invalid request options: {msg}"), vec![FieldProblem { field, message: msg }])
    })?;
    let scenario: PerturbationScenario = serde_json::from_value(Value::Object(map)).map_err(|e| {
        let msg = e.to_string();
        let field = quoted_field(&msg).unwrap_or_else(|| "scenario".into());
        ApiError::bad_request(format!("scenario does not match the schema: {msg}"), vec![FieldProblem { field, message: msg }])
    })?;
    let problems = scenario.problems();
    if !problems.is_empty() {
        return Err(ApiError::bad_request("scenario has invalid fields", problems));
    }
    Ok((controls, scenario))
}

fn field_map(f: &fdtkit::NodeField) -> Map<String, Value> {
    f.channels.iter().enumerate().map(|(c, name)| (name.clone(), json!(f.channel(c)))).collect()
}

#[derive(Debug, Serialize)]
struct OodReport {
    /// Score of the ensemble-mean perturbed input.
    mean_input: f64,
    /// Median score over the individual perturbed inputs.
    median_sample: f64,
    /// Score typical of training inputs (the median, by construction).
    baseline: f64,
}

fn scenario_payload(state: &ServiceState, controls: &Controls, scenario: &PerturbationScenario) -> ApiResult<Value> {
    let (bank_id, bank) = pick(&state.banks, controls.bank.as_deref(), "bank")?;
    let (data_id, entry) = pick(&state.datasets, controls.dataset.as_deref(), "dataset")?;
    let prepared = scenario::prepare(scenario, &state.mesh, bank, &entry.anomalies)?;
    let mut est: ResponseEstimate = emulator_response(
        bank,
        scenario.lags.as_deref(),
        &prepared.fluctuations,
        &prepared.forcing,
        scenario.rule,
    )?;
    est.seed = Some(scenario.seed);
    let df = fdtkit::fdt::forcing_vector(bank, &prepared.forcing)?;
    let perturbed: Vec<Vec<f64>> = prepared
        .fluctuations
        .iter()
        .map(|x| x.iter().zip(&df).map(|(a, b)| a + b).collect())
        .collect();
    let n = perturbed.len() as f64;
    let mean: Vec<f64> = (0..df.len()).map(|i| perturbed.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let mut scores = perturbed.iter().map(|x| entry.ood.score(x)).collect::<fdtkit::Result<Vec<_>>>()?;
    scores.sort_by(f64::total_cmp);
    let m = scores.len();
    let median = if m % 2 == 1 { scores[m / 2] } else { 0.5 * (scores[m / 2 - 1] + scores[m / 2]) };
    let ood = OodReport {
        mean_input: entry.ood.score(&mean)?,
        median_sample: median,
        baseline: 1.0,
    };
    let mut body = json!({
        "bank": bank_id,
        "dataset": data_id,
        "method": est.method,
        "lags": est.lags,
        "rule": est.rule,
        "samples": est.samples,
        "seed": scenario.seed,
        "scenario": scenario,
        "nodes": est.total.nodes,
        "total": field_map(&est.total),
        "forcing": field_map(&prepared.forcing),
        "ood": ood,
    });
    if controls.include_contributions {
        body["contributions"] = est
            .lags
            .iter()
            .zip(&est.contributions)
            .map(|(lag, f)| json!({ "lag": lag, "fields": field_map(f) }))
            .collect();
    }
    Ok(body)
}

async fn run_scenario(State(state): State<Shared>, body: Result<Json<Value>, JsonRejection>) -> ApiResult<Json<Value>> {
    let started = Instant::now();
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text(), Vec::new()))?;
    let (controls, scenario) = parse_request(body)?;
    let compute_start = Instant::now();
    let worker = state.clone();
    let mut payload = tokio::task::spawn_blocking(move || scenario_payload(&worker, &controls, &scenario))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("scenario worker failed: {e}")))??;
    payload["timing"] = json!({
        "compute_ms": compute_start.elapsed().as_secs_f64() * 1e3,
        "total_ms": started.elapsed().as_secs_f64() * 1e3,
    });
    Ok(Json(payload))
}

