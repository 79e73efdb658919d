use std::collections::{BTreeMap, BTreeSet};

use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Duration, Timelike, Utc};
use hydrodispatch::datastore::{parse_timestamp, PlantSample, PlantSummary};
use hydrodispatch::dispatch::{
    run_dispatch, write_case, CorrectionAction, DispatchRequest, DispatchRow, PlantDispatch, DEFAULT_ALPHA,
};
use hydrodispatch::hydrology::{select_scenario_window, HydroScenario, Season};
use hydrodispatch::interdependency::CascadeLink;
use hydrodispatch::ml::{plant_training_set, train_plant_with_progress, TrainConfig, TrainedPlantModel, TrainingReport};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::{model_path, AppState};

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct Json<T>(T);

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct QueryArgs<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct PathArg<T>(T);

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/plants", get(plants))
        .route("/api/plants/{name}/timeseries", get(timeseries))
        .route("/api/dispatch", post(submit_dispatch))
        .route("/api/dispatch/{id}", get(dispatch_status))
        .route("/api/dispatch/{id}/export", get(dispatch_export))
        .route("/api/train", post(submit_train))
        .route("/api/train/{id}", get(train_status))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed here")
        })
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn plants(State(state): State<AppState>) -> ApiResult<Json<Vec<PlantSummary>>> {
    state.read(|_, store| Ok(Json(store.plant_summaries()?))).await
}

/// Field names accepted by the timeseries endpoint.
pub const FIELDS: [&str; 5] = ["flow", "head", "storage", "spill", "mw"];

/// Longest window served in one request, in hourly slots.
const MAX_SLOTS: i64 = 24 * 366 * 20;

fn field_value(field: &str, s: &PlantSample) -> Option<f64> {
    match field {
        "flow" => s.flow_cfs,
        "head" => s.head_ft,
        "storage" => s.storage_af,
        "spill" => s.spill_cfs,
        "mw" => s.total_mw,
        _ => unreachable!("fields are checked on entry"),
    }
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    start: Option<String>,
    end: Option<String>,
    fields: Option<String>,
}

/// Hourly grid over `[start, end)`; slots without a stored sample are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub project: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub timestamps: Vec<DateTime<Utc>>,
    pub series: BTreeMap<String, Vec<Option<f64>>>,
}

fn parse_bound(name: &str, raw: &str) -> ApiResult<DateTime<Utc>> {
    let ts = parse_timestamp(raw).map_err(|e| ApiError::bad_request("invalid_window", format!("{name}: {e}")))?;
    if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
        return Err(ApiError::bad_request("invalid_window", format!("{name} must fall on a whole hour")));
    }
    Ok(ts)
}

async fn timeseries(
    State(state): State<AppState>,
    PathArg(name): PathArg<String>,
    QueryArgs(q): QueryArgs<WindowQuery>,
) -> ApiResult<Json<TimeSeries>> {
    let fields: Vec<String> = match q.fields.as_deref() {
        None | Some("") => FIELDS.iter().map(|f| f.to_string()).collect(),
        Some(list) => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for f in list.split(',').map(str::trim) {
                if !FIELDS.contains(&f) {
                    return Err(ApiError::bad_request("invalid_field", format!("unknown field {f:?}"))
                        .with_details(json!({ "allowed": FIELDS })));
                }
                if seen.insert(f) {
                    out.push(f.to_string());
                }
            }
            out
        }
    };
    let start = q.start.as_deref().map(|s| parse_bound("start", s)).transpose()?;
    let end = q.end.as_deref().map(|s| parse_bound("end", s)).transpose()?;
    if let (Some(s), Some(e)) = (start, end) {
        if s >= e {
            return Err(ApiError::bad_request("invalid_window", "start must precede end"));
        }
    }
    state
        .read(move |_, store| {
            if !store.project_exists(&name)? {
                return Err(ApiError::not_found("plant", &name));
            }
            let extent = store.plant_extent(&name)?;
            let (start, end) = match (start, end, extent) {
                (Some(s), Some(e), _) => (s, e),
                (s, e, Some((lo, hi))) => (s.unwrap_or(lo), e.unwrap_or(hi)),
                (s, e, None) => {
                    let now = Utc::now().with_minute(0).and_then(|t| t.with_second(0)).expect("valid");
                    (s.unwrap_or(now), e.unwrap_or(now))
                }
            };
            if start > end || (start == end && extent.is_some()) {
                return Err(ApiError::bad_request("invalid_window", "start must precede end"));
            }
            let slots = (end - start).num_hours();
            if slots > MAX_SLOTS {
                return Err(ApiError::bad_request(
                    "window_too_large",
                    format!("{slots} hourly slots requested, at most {MAX_SLOTS} served"),
                ));
            }
            let samples = store.query_plant_window(&name, start, end)?;
            let mut by_slot: Vec<Option<&PlantSample>> = vec![None; slots as usize];
            for s in &samples {
                by_slot[(s.timestamp - start).num_hours() as usize] = Some(s);
            }
            let timestamps = (0..slots).map(|k| start + Duration::hours(k)).collect();
            let series = fields
                .iter()
                .map(|f| (f.clone(), by_slot.iter().map(|s| s.and_then(|s| field_value(f, s))).collect()))
                .collect();
            Ok(Json(TimeSeries { project: name, start, end, timestamps, series }))
        })
        .await
}

/// `POST /api/dispatch` body. `scenario` is either the mini-syntax string
/// (`dry:summer`, `hist:START..END`) or the tagged object form.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchBody {
    pub plants: Vec<String>,
    pub scenario: Value,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
    #[serde(default)]
    pub reference_mw: BTreeMap<String, f64>,
}

fn parse_scenario(v: &Value) -> ApiResult<HydroScenario> {
    let parsed = match v {
        Value::String(s) => s.parse::<HydroScenario>().map_err(|e| e.to_string()),
        other => serde_json::from_value::<HydroScenario>(other.clone()).map_err(|e| e.to_string()),
    };
    let scenario = parsed.map_err(|m| ApiError::unprocessable("invalid_scenario", m))?;
    if let HydroScenario::Historical { start, end } = scenario {
        if start >= end {
            return Err(ApiError::unprocessable("invalid_scenario", "historical window must have start < end"));
        }
    }
    Ok(scenario)
}

#[derive(Debug, Clone, Serialize)]
pub struct LoggedAction {
    pub project: String,
    #[serde(flatten)]
    pub action: CorrectionAction,
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchResult {
    pub season: Season,
    pub rows: Vec<DispatchRow>,
    pub correction_log: Vec<LoggedAction>,
    pub plants: Vec<PlantDispatch>,
    pub links_used: Vec<CascadeLink>,
    pub model_fingerprints: BTreeMap<String, String>,
    /// The planning-case CSV, byte-identical to the export endpoint.
    pub export_csv: String,
}

struct Accepted(String, &'static str);

impl IntoResponse for Accepted {
    fn into_response(self) -> Response {
        let location = format!("/api/{}/{}", self.1, self.0);
        (
            StatusCode::ACCEPTED,
            [(header::LOCATION, location.clone())],
            axum::Json(json!({ "id": self.0, "status": "queued", "poll": location })),
        )
            .into_response()
    }
}

type Prepared = (DispatchRequest, BTreeMap<String, TrainedPlantModel>, Vec<CascadeLink>);

fn prepare_dispatch(state: &AppState, store: &hydrodispatch::datastore::Store, body: DispatchBody) -> ApiResult<Prepared> {
    let plants: Vec<String> = body.plants.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if plants.is_empty() {
        return Err(ApiError::unprocessable("invalid_request", "no plants requested"));
    }
    let unknown: Vec<&String> = plants.iter().filter(|p| !matches!(store.static_plant(p), Ok(Some(_)))).collect();
    if !unknown.is_empty() {
        return Err(ApiError::unprocessable("unknown_plant", format!("unknown plants {unknown:?}"))
            .with_details(json!({ "plants": unknown })));
    }
    let scenario = parse_scenario(&body.scenario)?;
    if let Some(t) = body.threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(ApiError::unprocessable("invalid_threshold", format!("threshold {t} outside (0, 1]")));
        }
    }
    let alpha = body.alpha.unwrap_or(DEFAULT_ALPHA);
    if !alpha.is_finite() {
        return Err(ApiError::unprocessable("invalid_request", "alpha must be finite"));
    }

    let mut models = BTreeMap::new();
    let mut untrained = Vec::new();
    for p in &plants {
        let path = model_path(&state.config().models_dir, p);
        if !path.exists() {
            untrained.push(p.clone());
            continue;
        }
        let model = TrainedPlantModel::load(&path)?;
        if model.plant != *p {
            return Err(ApiError::conflict(
                "incompatible_model",
                format!("{} holds a model of {:?}", path.display(), model.plant),
            ));
        }
        models.insert(p.clone(), model);
    }
    if !untrained.is_empty() {
        return Err(ApiError::conflict("untrained", format!("no trained model for {untrained:?}"))
            .with_details(json!({ "plants": untrained })));
    }
    for p in &plants {
        select_scenario_window(store, &scenario, p)
            .map_err(|e| ApiError::unprocessable("invalid_scenario", format!("{p}: {e}")))?;
    }

    let mut req = DispatchRequest::new(plants, scenario);
    req.threshold = body.threshold;
    req.seed = body.seed.unwrap_or(0);
    req.alpha = alpha;
    req.targets = body.targets;
    req.reference_mw = body.reference_mw;
    Ok((req, models, state.links()?))
}

fn execute_dispatch(
    store: &hydrodispatch::datastore::Store,
    req: &DispatchRequest,
    models: &BTreeMap<String, TrainedPlantModel>,
    links: &[CascadeLink],
) -> ApiResult<DispatchResult> {
    let run = run_dispatch(store, req, models, links)?;
    for r in &run.rows {
        r.validate()?;
    }
    let mut csv = Vec::new();
    write_case(&mut csv, &run.rows)?;
    let correction_log = run
        .plants
        .iter()
        .flat_map(|p| p.correction.log.iter().map(|a| LoggedAction { project: p.project.clone(), action: a.clone() }))
        .collect();
    Ok(DispatchResult {
        season: run.season,
        rows: run.rows,
        correction_log,
        plants: run.plants,
        links_used: run.links_used,
        model_fingerprints: run.model_fingerprints,
        export_csv: String::from_utf8(csv).expect("CSV of UTF-8 fields"),
    })
}

async fn submit_dispatch(State(state): State<AppState>, Json(body): Json<DispatchBody>) -> ApiResult<Accepted> {
    let (req, models, links) = state.read(move |state, store| prepare_dispatch(state, store, body)).await?;
    let id = state.0.dispatch_jobs.submit(req.clone(), |_| false)?;
    let job_id = id.clone();
    tokio::spawn(async move {
        let inner = &state.0;
        let _permit = inner.pool.clone().acquire_owned().await.expect("pool never closes");
        inner.dispatch_jobs.start(&job_id);
        let worker = state.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let store = worker.open_store()?;
            execute_dispatch(&store, &req, &models, &links)
        })
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(format!("dispatch worker failed: {e}"))));
        inner.dispatch_jobs.finish(&job_id, outcome);
    });
    Ok(Accepted(id, "dispatch"))
}

async fn dispatch_status(State(state): State<AppState>, PathArg(id): PathArg<String>) -> ApiResult<Response> {
    let job = state.0.dispatch_jobs.get(&id).ok_or_else(|| ApiError::not_found("dispatch run", &id))?;
    Ok(axum::Json(job).into_response())
}

async fn dispatch_export(State(state): State<AppState>, PathArg(id): PathArg<String>) -> ApiResult<Response> {
    let job = state.0.dispatch_jobs.get(&id).ok_or_else(|| ApiError::not_found("dispatch run", &id))?;
    let Some(result) = job.result else {
        return Err(ApiError::conflict("not_ready", format!("run {id} is {:?}", job.status)));
    };
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}.csv\"")),
        ],
        result.export_csv.clone(),
    )
        .into_response())
}

/// `POST /api/train` body; missing config fields take their defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBody {
    pub plant: String,
    #[serde(default)]
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub plant: String,
    pub model_path: String,
    pub report: TrainingReport,
}

async fn submit_train(State(state): State<AppState>, Json(body): Json<TrainBody>) -> ApiResult<Accepted> {
    body.config.validate().map_err(|e| ApiError::unprocessable("invalid_config", e.to_string()))?;
    let plant = body.plant.clone();
    state
        .read(move |_, store| match store.static_plant(&plant)? {
            Some(_) => Ok(()),
            None => Err(ApiError::not_found("plant", &plant)),
        })
        .await?;
    let id = state.0.train_jobs.submit(body.clone(), |other| other.plant == body.plant)?;
    let job_id = id.clone();
    tokio::spawn(async move {
        let inner = &state.0;
        let _permit = inner.pool.clone().acquire_owned().await.expect("pool never closes");
        inner.train_jobs.start(&job_id);
        let worker = state.clone();
        let id2 = job_id.clone();
        let outcome = tokio::task::spawn_blocking(move || -> ApiResult<TrainResult> {
            let store = worker.open_store()?;
            let (spec, rows) = plant_training_set(&store, &body.plant)?;
            drop(store);
            let jobs = &worker.0.train_jobs;
            jobs.progress(&id2, 0, spec.categories.len());
            let model =
                train_plant_with_progress(&spec, &rows, &body.config, &|done, total| jobs.progress(&id2, done, total))?;
            let path = model_path(&worker.config().models_dir, &body.plant);
            {
                let _guard = worker.0.write_lock.lock().unwrap_or_else(|p| p.into_inner());
                std::fs::create_dir_all(&worker.config().models_dir).map_err(hydrodispatch::Error::from)?;
                model.save(&path)?;
            }
            Ok(TrainResult { plant: body.plant, model_path: path.display().to_string(), report: model.report })
        })
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(format!("training worker failed: {e}"))));
        inner.train_jobs.finish(&job_id, outcome);
    });
    Ok(Accepted(id, "train"))
}

async fn train_status(State(state): State<AppState>, PathArg(id): PathArg<String>) -> ApiResult<Response> {
    let job = state.0.train_jobs.get(&id).ok_or_else(|| ApiError::not_found("training job", &id))?;
    Ok(axum::Json(job).into_response())
}
