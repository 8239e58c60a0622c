mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vehiclesdf::geometry::{marching_cubes, GridSpec};
use vehiclesdf::params::TraceRow;
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusRanges};
use vehiclesdf_cli::jobs::{JobEvent, JobKind, JobRecord, JobStatus};
use vehiclesdf_cli::model::{optimize_and_decode, Models, ParamBounds};
use vehiclesdf_cli::{router, AppState, ServiceConfig};

fn state(dir: &std::path::Path, models: Option<Models>, workers: usize) -> AppState {
    let config = ServiceConfig {
        data_dir: dir.to_path_buf(),
        workers,
        decode_resolution: 24,
        default_max_iters: 400,
        default_tolerance: 1e-8,
        ..ServiceConfig::default()
    };
    AppState::new(config, models, None).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn call_json(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn target_json() -> Value {
    json!(common::target().0.to_vec())
}

async fn wait_done(app: &Router, id: &str) -> JobRecord {
    for _ in 0..2000 {
        let (s, v) = call_json(app, "GET", &format!("/api/v1/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let rec: JobRecord = serde_json::from_value(v).unwrap();
        if rec.status == JobStatus::Done || rec.status == JobStatus::Failed {
            return rec;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

/// Parse a server-sent event body into `(event name, data)` pairs.
fn parse_sse(body: &[u8]) -> Vec<(String, Value)> {
    let text = String::from_utf8(body.to_vec()).unwrap();
    text.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            Some((name?, serde_json::from_str(&data).unwrap()))
        })
        .collect()
}

fn streamed_rows(events: &[(String, Value)]) -> Vec<TraceRow> {
    events
        .iter()
        .filter_map(
            |(_, v)| match serde_json::from_value::<JobEvent>(v.clone()).unwrap() {
                JobEvent::Trace { rows } => Some(rows),
                _ => None,
            },
        )
        .flatten()
        .collect()
}

#[tokio::test]
async fn without_checkpoint_optimize_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path(), None, 1));
    let (s, v) = call_json(&app, "GET", "/api/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["models_loaded"], false);
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json() })),
    )
    .await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/drag",
        Some(json!({ "mesh_id": "x" })),
    )
    .await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call_json(&app, "GET", "/api/v1/bounds", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path(), Some(common::tiny_models()), 1));
    let (s, v) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": [1.0, 0.28, 0.43, 0.037, 0.6, 0.2] })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let msg = v["error"].as_str().unwrap();
    assert!(msg.contains('7') && msg.contains('6'), "{msg}");

    let (s, _) = call(&app, "POST", "/api/v1/optimize", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json(), "seeds": 0 })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json(), "bogus": 1 })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let mut neg = common::target().0.to_vec();
    neg[2] = -0.1;
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": neg })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "POST", "/api/v1/drag", Some(json!({ "mesh": "x" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path(), Some(common::tiny_models()), 1));
    for uri in [
        "/api/v1/jobs/nonexistent",
        "/api/v1/meshes/nonexistent.obj",
        "/api/v1/params/nonexistent",
        "/api/v1/stream/nonexistent",
        "/api/v1/meshes/..%2Fescape.obj",
    ] {
        let (s, _) = call(&app, "GET", uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/drag",
        Some(json!({ "mesh_id": "nonexistent" })),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn mesh_of_unfinished_job_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path(), Some(common::tiny_models()), 1);
    st.jobs.insert("pending", JobKind::Optimize, 0, Value::Null);
    let app = router(st.clone());
    let (s, _) = call(&app, "GET", "/api/v1/meshes/pending.obj", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    st.jobs.start("pending").unwrap();
    let (s, _) = call_json(
        &app,
        "POST",
        "/api/v1/drag",
        Some(json!({ "mesh_id": "pending" })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    st.jobs.fail("pending", "boom".into()).unwrap();
    let (s, _) = call(&app, "GET", "/api/v1/meshes/pending.obj", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn optimize_job_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path(), Some(common::tiny_models()), 2));
    let (s, v) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json(), "seeds": 2, "seed": 5, "max_iters": 3000, "tol": 1e-8 })),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let ids: Vec<String> = serde_json::from_value(v["job_ids"].clone()).unwrap();
    assert_eq!(ids.len(), 2);
    assert_eq!(v["job_id"], ids[0]);
    assert_ne!(ids[0], ids[1]);

    for (k, id) in ids.iter().enumerate() {
        let rec = wait_done(&app, id).await;
        assert_eq!(rec.status, JobStatus::Done, "{:?}", rec.error);
        assert_eq!(rec.seed, 5 + k as u64);
        let res = rec.result.clone().unwrap();
        let last = rec.trace.last().unwrap();
        assert_eq!(last.mse, res.mse);
        assert_eq!(last.params, res.final_params);
        assert!(res.mse <= 1e-4, "mse {}", res.mse);
        assert!(rec.trace.windows(2).all(|w| w[1].mse <= w[0].mse));

        let (s, obj) = call(
            &app,
            "GET",
            &format!("/api/v1/meshes/{}.obj", res.mesh_id),
            None,
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        let mesh = vehiclesdf::geometry::TriangleMesh::read_obj(std::io::Cursor::new(obj)).unwrap();
        assert!(!mesh.is_empty());

        let (s, v) = call_json(
            &app,
            "POST",
            "/api/v1/drag",
            Some(json!({ "mesh_id": res.mesh_id })),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["cd"], 0.31);

        // The stream of a finished job replays everything and ends.
        let (s, body) = call(&app, "GET", &format!("/api/v1/stream/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let events = parse_sse(&body);
        assert_eq!(events.last().unwrap().0, "done");
        assert_eq!(streamed_rows(&events), rec.trace);
    }

    let (s, v) = call_json(&app, "GET", "/api/v1/jobs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 2);

    // Same request, same ids: nothing new is queued.
    let (_, again) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json(), "seeds": 2, "seed": 5, "max_iters": 3000, "tol": 1e-8 })),
    )
    .await;
    assert_eq!(
        serde_json::from_value::<Vec<String>>(again["job_ids"].clone()).unwrap(),
        ids
    );
}

#[tokio::test]
async fn live_stream_loses_no_rows() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(dir.path(), Some(common::tiny_models()), 1));
    let (_, v) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json(), "seed": 9, "max_iters": 2000, "tol": 0.0 })),
    )
    .await;
    let id = v["job_id"].as_str().unwrap().to_string();
    // Subscribed before the job has finished; the body ends with the job.
    let (s, body) = call(&app, "GET", &format!("/api/v1/stream/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let events = parse_sse(&body);
    let rec = wait_done(&app, &id).await;
    assert_eq!(streamed_rows(&events), rec.trace);
    assert!(events.len() > 2);
    let trace_events = &events[..events.len() - 1];
    assert!(trace_events.iter().all(|(n, _)| n == "trace"));
}

#[tokio::test]
async fn concurrent_jobs_match_sequential_runs() {
    let dir = tempfile::tempdir().unwrap();
    let models = common::tiny_models();
    let app = router(state(dir.path(), Some(models.clone()), 4));
    let (_, v) = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": target_json(), "seeds": 4, "seed": 0, "max_iters": 500, "tol": 1e-8 })),
    )
    .await;
    let ids: Vec<String> = serde_json::from_value(v["job_ids"].clone()).unwrap();
    let cfg = vehiclesdf::params::OptimizeConfig {
        max_steps: 500,
        tolerance: 1e-8,
        ..Default::default()
    };
    let grid = GridSpec::new(24, 0.95).unwrap();
    for (k, id) in ids.iter().enumerate() {
        let rec = wait_done(&app, id).await;
        let seq = optimize_and_decode(
            &models,
            &common::target(),
            k as u64,
            &cfg,
            &grid,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(rec.trace, seq.trace.rows);
        assert_eq!(rec.result.unwrap().latent, seq.latent.0);
    }
}

#[tokio::test]
async fn finished_jobs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let body = json!({ "target": target_json(), "seed": 2, "max_iters": 300 });
    let first = {
        let app = router(state(dir.path(), Some(common::tiny_models()), 1));
        let (_, v) = call_json(&app, "POST", "/api/v1/optimize", Some(body.clone())).await;
        wait_done(&app, v["job_id"].as_str().unwrap()).await
    };
    let app = router(state(dir.path(), Some(common::tiny_models()), 1));
    let (_, v) = call_json(&app, "POST", "/api/v1/optimize", Some(body)).await;
    assert_eq!(v["job_id"], first.job_id.as_str());
    let second = wait_done(&app, &first.job_id).await;
    assert_eq!(second.trace, first.trace);
    assert_eq!(second.result, first.result);
}

#[tokio::test]
async fn params_and_bounds_for_stored_toy_car() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_corpus(3, 4, &CorpusRanges::default()).unwrap();
    let entry = &manifest.entries[0];
    let grid = GridSpec::new(64, 0.95).unwrap();
    let mesh = marching_cubes(&make_toy_car(&entry.spec).unwrap().shape, &grid)
        .unwrap()
        .mesh;

    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let st = AppState::new(
        config,
        Some(common::tiny_models()),
        ParamBounds::from_manifest(&manifest),
    )
    .unwrap();
    st.store
        .put("toycar.obj", mesh.to_obj_string().as_bytes())
        .unwrap();
    let app = router(st);

    let (s, v) = call_json(&app, "GET", "/api/v1/params/toycar", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let params: Vec<f64> = serde_json::from_value(v["params"].clone()).unwrap();
    assert_eq!(params.len(), 7);
    let h = grid.cell_size();
    for (k, (a, b)) in params.iter().zip(entry.true_params.0).enumerate() {
        assert!(
            (a - b).abs() <= (2.0 * h).max(0.01),
            "param {k}: {a} vs {b}"
        );
    }
    assert!(v["estimated"].is_null());

    let (s, v) = call_json(&app, "GET", "/api/v1/bounds", None).await;
    assert_eq!(s, StatusCode::OK);
    let b: ParamBounds = serde_json::from_value(v).unwrap();
    assert_eq!(b.count, 3);
    for k in 0..7 {
        assert!(b.min.0[k] <= b.median.0[k] && b.median.0[k] <= b.max.0[k]);
    }

    let (s, v) = call_json(
        &app,
        "POST",
        "/api/v1/drag",
        Some(json!({ "mesh_id": "toycar" })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["cd"], 0.31);
}
