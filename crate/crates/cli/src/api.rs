//! HTTP routes under `/api/v1`.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, Semaphore};
use vehiclesdf::autodecoder::default_decode_grid;
use vehiclesdf::checkpoint::Container;
use vehiclesdf::geometry::{GridSpec, TriangleMesh};
use vehiclesdf::params::{
    extract_params, ExtractionConfig, GeomParams, OptimizeConfig, PARAM_COUNT,
};
use vehiclesdf::toycar::CorpusManifest;

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::jobs::{JobEvent, JobKind, JobRecord, JobResult, JobStatus, JobTable, TraceBatcher};
use crate::model::{optimize_and_decode, Models, ParamBounds};
use crate::store::{content_id, ArtifactStore};

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub models: Option<Arc<Models>>,
    pub bounds: Option<Arc<ParamBounds>>,
    pub jobs: JobTable,
    pub store: ArtifactStore,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(
        config: ServiceConfig,
        models: Option<Models>,
        bounds: Option<ParamBounds>,
    ) -> ApiResult<Self> {
        config.validate()?;
        let store = ArtifactStore::open(&config.data_dir)?;
        Ok(Self {
            workers: Arc::new(Semaphore::new(config.workers)),
            config: Arc::new(config),
            models: models.map(Arc::new),
            bounds: bounds.map(Arc::new),
            jobs: JobTable::new(),
            store,
        })
    }

    /// Load the checkpoint and manifest named in the config, if any.
    pub fn from_config(config: ServiceConfig) -> ApiResult<Self> {
        let models = match &config.checkpoint {
            Some(p) => {
                let mut c = Container::load(p)?;
                if let Some(d) = &config.drag_model {
                    c.merge_missing(&Container::load(d)?)?;
                }
                Some(Models::from_container(&c)?)
            }
            None => None,
        };
        let bounds = match &config.manifest {
            Some(p) => {
                let f = std::io::BufReader::new(std::fs::File::open(p)?);
                ParamBounds::from_manifest(&CorpusManifest::read_jsonl(f)?)
            }
            None => None,
        };
        Self::new(config, models, bounds)
    }

    fn models(&self) -> ApiResult<Arc<Models>> {
        self.models
            .clone()
            .ok_or_else(|| ServiceError::Unavailable("no checkpoint loaded".into()))
    }

    fn decode_grid(&self) -> GridSpec {
        GridSpec {
            resolution: self.config.decode_resolution,
            ..default_decode_grid()
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/bounds", get(bounds))
        .route("/api/v1/optimize", post(submit_optimize))
        .route("/api/v1/jobs", get(list_jobs))
        .route("/api/v1/jobs/{id}", get(get_job))
        .route("/api/v1/meshes/{file}", get(get_mesh))
        .route("/api/v1/params/{mesh_id}", get(get_params))
        .route("/api/v1/drag", post(drag))
        .route("/api/v1/stream/{job_id}", get(stream))
        .with_state(state)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "models_loaded": s.models.is_some(),
        "drag_model": s.models.as_ref().is_some_and(|m| m.drag.is_some()),
        "jobs": s.jobs.list().len(),
    }))
}

async fn bounds(State(s): State<AppState>) -> ApiResult<Json<ParamBounds>> {
    s.bounds
        .as_deref()
        .cloned()
        .map(Json)
        .ok_or_else(|| ServiceError::NotFound("no corpus manifest configured".into()))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    pub target: Vec<f64>,
    #[serde(default = "one")]
    pub seeds: usize,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

fn one() -> usize {
    1
}

/// The fields that determine one job's outcome, hashed with its seed.
#[derive(Clone, Debug, Serialize)]
struct JobSpec {
    target: [f64; PARAM_COUNT],
    max_iters: usize,
    tol: f64,
    decode_resolution: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub job_id: String,
    pub job_ids: Vec<String>,
}

/// Upper bound on seeds per request.
pub const MAX_SEEDS: usize = 64;

async fn submit_optimize(
    State(s): State<AppState>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SubmitResponse>)> {
    let req: OptimizeRequest = parse_body(&body)?;
    if req.target.len() != PARAM_COUNT {
        return Err(ServiceError::BadRequest(format!(
            "target must have {PARAM_COUNT} values, got {}",
            req.target.len()
        )));
    }
    let target = GeomParams::from_slice(&req.target)?;
    if target.0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(ServiceError::BadRequest(
            "target values must be positive and finite".into(),
        ));
    }
    if req.seeds == 0 || req.seeds > MAX_SEEDS {
        return Err(ServiceError::BadRequest(format!(
            "seeds must be in 1..={MAX_SEEDS}"
        )));
    }
    let spec = JobSpec {
        target: target.0,
        max_iters: req.max_iters.unwrap_or(s.config.default_max_iters),
        tol: req.tol.unwrap_or(s.config.default_tolerance),
        decode_resolution: s.config.decode_resolution,
    };
    if !(spec.tol >= 0.0 && spec.tol.is_finite()) {
        return Err(ServiceError::BadRequest("tol must be non-negative".into()));
    }
    let models = s.models()?;
    let base = req.seed.unwrap_or(s.config.seed);
    let request = serde_json::to_value(&spec).expect("spec serializes");

    let mut ids = Vec::with_capacity(req.seeds);
    for k in 0..req.seeds as u64 {
        let seed = base.wrapping_add(k);
        let id = content_id(&spec, seed);
        if s.jobs.insert(&id, JobKind::Optimize, seed, request.clone()) {
            tokio::spawn(run_optimize(
                s.clone(),
                models.clone(),
                id.clone(),
                spec.clone(),
                seed,
            ));
        }
        ids.push(id);
    }
    Ok((
        StatusCode::ACCEPTED,
        Json(SubmitResponse {
            job_id: ids[0].clone(),
            job_ids: ids,
        }),
    ))
}

fn record_name(id: &str) -> String {
    format!("{id}.job.json")
}

fn mesh_name(id: &str) -> String {
    format!("{id}.obj")
}

async fn run_optimize(s: AppState, models: Arc<Models>, id: String, spec: JobSpec, seed: u64) {
    let Ok(_permit) = s.workers.clone().acquire_owned().await else {
        return;
    };
    if s.jobs.start(&id).is_err() {
        return;
    }
    // A finished record for the same content id is replayed instead of
    // recomputed.
    if let Some(rec) = cached_record(&s.store, &id) {
        if let Some(result) = rec.result {
            let _ = s.jobs.append_trace(&id, rec.trace);
            let _ = s.jobs.finish(&id, result);
            return;
        }
    }
    let worker = {
        let (s, id) = (s.clone(), id.clone());
        tokio::task::spawn_blocking(move || compute(&s, &models, &id, &spec, seed))
    };
    let outcome = match worker.await {
        Ok(r) => r,
        Err(e) => Err(ServiceError::Join(e.to_string())),
    };
    match outcome {
        Ok(result) => {
            if s.jobs.finish(&id, result).is_ok() {
                if let Some(rec) = s.jobs.get(&id) {
                    let bytes = serde_json::to_vec(&rec).expect("record serializes");
                    if let Err(e) = s.store.put(&record_name(&id), &bytes) {
                        tracing::warn!(job = %id, error = %e, "could not persist job record");
                    }
                }
            }
        }
        Err(e) => {
            tracing::warn!(job = %id, error = %e, "job failed");
            let _ = s.jobs.fail(&id, e.to_string());
        }
    }
}

fn cached_record(store: &ArtifactStore, id: &str) -> Option<JobRecord> {
    if !store.exists(&mesh_name(id)) {
        return None;
    }
    let bytes = store.get(&record_name(id)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn compute(
    s: &AppState,
    models: &Models,
    id: &str,
    spec: &JobSpec,
    seed: u64,
) -> ApiResult<JobResult> {
    let config = OptimizeConfig {
        max_steps: spec.max_iters,
        tolerance: spec.tol,
        ..OptimizeConfig::default()
    };
    let mut batcher = TraceBatcher::new(|rows| {
        let _ = s.jobs.append_trace(id, rows);
    });
    let out = optimize_and_decode(
        models,
        &GeomParams(spec.target),
        seed,
        &config,
        &s.decode_grid(),
        &mut |row| batcher.push(row),
    );
    batcher.drain();
    let out = out?;
    s.store
        .put(&mesh_name(id), out.mesh.to_obj_string().as_bytes())?;
    let last = out.trace.final_row();
    Ok(JobResult {
        mesh_id: id.to_string(),
        final_params: last.params,
        mse: last.mse,
        converged: out.trace.converged,
        iterations: last.iter,
        extracted_params: out.extracted,
        latent: out.latent.0,
    })
}

async fn list_jobs(State(s): State<AppState>) -> Json<Vec<JobRecord>> {
    Json(s.jobs.list())
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    s.jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown job {id}")))
}

/// Mesh bytes for a finished job, or 404/409.
fn load_mesh_bytes(s: &AppState, mesh_id: &str) -> ApiResult<Vec<u8>> {
    if let Some(rec) = s.jobs.get(mesh_id) {
        match rec.status {
            JobStatus::Done => {}
            JobStatus::Failed => {
                return Err(ServiceError::Conflict(format!(
                    "job {mesh_id} failed; it has no mesh"
                )))
            }
            _ => return Err(ServiceError::Conflict(format!("job {mesh_id} is not done"))),
        }
    }
    let valid = !mesh_id.is_empty()
        && mesh_id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if !valid || !s.store.exists(&mesh_name(mesh_id)) {
        return Err(ServiceError::NotFound(format!("unknown mesh {mesh_id}")));
    }
    Ok(s.store.get(&mesh_name(mesh_id))?)
}

fn load_mesh(s: &AppState, mesh_id: &str) -> ApiResult<TriangleMesh> {
    let bytes = load_mesh_bytes(s, mesh_id)?;
    Ok(TriangleMesh::read_obj(std::io::Cursor::new(bytes))?)
}

async fn get_mesh(State(s): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let id = file.strip_suffix(".obj").unwrap_or(&file);
    let bytes = load_mesh_bytes(&s, id)?;
    Ok(([(header::CONTENT_TYPE, "model/obj")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsResponse {
    pub mesh_id: String,
    /// Measured on the mesh.
    pub params: GeomParams,
    /// Estimator output at the optimized latent, for job meshes.
    pub estimated: Option<GeomParams>,
}

async fn get_params(
    State(s): State<AppState>,
    Path(mesh_id): Path<String>,
) -> ApiResult<Json<ParamsResponse>> {
    let mesh = load_mesh(&s, &mesh_id)?;
    let estimated = s
        .jobs
        .get(&mesh_id)
        .and_then(|r| r.result)
        .map(|r| r.final_params);
    let cfg = ExtractionConfig::for_grid(s.decode_grid().cell_size());
    let params = tokio::task::spawn_blocking(move || extract_params(&mesh, &cfg).map(|(p, _)| p))
        .await
        .map_err(|e| ServiceError::Join(e.to_string()))??;
    Ok(Json(ParamsResponse {
        mesh_id,
        params,
        estimated,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DragRequest {
    mesh_id: String,
}

async fn drag(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: DragRequest = parse_body(&body)?;
    let models = s.models()?;
    if models.drag.is_none() {
        return Err(ServiceError::Unavailable(
            "checkpoint has no drag model".into(),
        ));
    }
    let mesh = load_mesh(&s, &req.mesh_id)?;
    let cd = tokio::task::spawn_blocking(move || {
        vehiclesdf::drag::predict_cd(models.drag.as_ref().expect("checked above"), &mesh)
    })
    .await
    .map_err(|e| ServiceError::Join(e.to_string()))??;
    Ok(Json(json!({ "mesh_id": req.mesh_id, "cd": cd })))
}

struct Cursor {
    jobs: JobTable,
    id: String,
    next: usize,
    pending: VecDeque<JobEvent>,
    rx: Option<watch::Receiver<usize>>,
    finished: bool,
}

/// Replays every event of the job so far, then follows it until it ends.
async fn stream(
    State(s): State<AppState>,
    Path(job_id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    if s.jobs.get(&job_id).is_none() {
        return Err(ServiceError::NotFound(format!("unknown job {job_id}")));
    }
    let cursor = Cursor {
        jobs: s.jobs.clone(),
        id: job_id,
        next: 0,
        pending: VecDeque::new(),
        rx: None,
        finished: false,
    };
    let events = futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.pending.pop_front() {
                let index = c.next - c.pending.len() - 1;
                c.finished = ev.is_terminal();
                let sse = Event::default()
                    .event(ev.name())
                    .id(index.to_string())
                    .data(serde_json::to_string(&ev).expect("event serializes"));
                return Some((Ok(sse), c));
            }
            if c.finished {
                return None;
            }
            if let Some(rx) = c.rx.as_mut() {
                if rx.changed().await.is_err() {
                    return None;
                }
            }
            let (tail, rx) = c.jobs.events_since(&c.id, c.next)?;
            c.next += tail.len();
            c.pending.extend(tail);
            c.rx = Some(rx);
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
