//! Drive the HTTP API in-process: submit an optimization, follow the job to
//! completion, then fetch its mesh, re-measure it and ask for a drag
//! estimate.
//!
//! Needs a checkpoint holding a decoder and an estimator, e.g. the output of
//! `vsdf train-estimator`, and optionally a `vsdf drag-train` model:
//!
//! cargo run --release -p vehiclesdf-cli --example http_service -- model.vsdf [drag.vsdf]

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vehiclesdf_cli::{router, AppState, ServiceConfig};

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> Result<(u16, Vec<u8>)> {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))?,
        None => req.body(Body::empty())?,
    };
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status().as_u16();
    Ok((
        status,
        resp.into_body().collect().await?.to_bytes().to_vec(),
    ))
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Result<Value> {
    let (status, bytes) = call(app, method, uri, body).await?;
    let v: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} -> {status}");
    if status >= 400 {
        bail!("{method} {uri} failed: {v}");
    }
    Ok(v)
}

#[tokio::main]
async fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args
        .next()
        .map(PathBuf::from)
        .context("usage: http_service <checkpoint> [drag-model]")?;
    let drag_model = args.next().map(PathBuf::from);
    let data_dir = std::env::temp_dir().join("vehiclesdf-http-example");
    let config = ServiceConfig {
        data_dir,
        checkpoint: Some(checkpoint),
        drag_model: drag_model.clone(),
        ..ServiceConfig::default()
    };
    let app = router(AppState::from_config(config)?);

    println!("{}", call_json(&app, "GET", "/api/v1/health", None).await?);
    let submitted = call_json(
        &app,
        "POST",
        "/api/v1/optimize",
        Some(json!({ "target": [1.0, 0.28, 0.43, 0.037, 0.6, 0.2, 0.2], "seeds": 1, "seed": 0 })),
    )
    .await?;
    let id = submitted["job_id"]
        .as_str()
        .context("no job id")?
        .to_string();

    let job = loop {
        let job = call_json(&app, "GET", &format!("/api/v1/jobs/{id}"), None).await?;
        match job["status"].as_str() {
            Some("done") => break job,
            Some("failed") => bail!("job failed: {}", job["error"]),
            _ => tokio::time::sleep(Duration::from_millis(500)).await,
        }
    };
    let result = &job["result"];
    println!(
        "iterations {} mse {} converged {}",
        result["iterations"], result["mse"], result["converged"]
    );
    println!("final parameters {}", result["final_params"]);

    let mesh_id = result["mesh_id"]
        .as_str()
        .context("no mesh id")?
        .to_string();
    let (_, obj) = call(&app, "GET", &format!("/api/v1/meshes/{mesh_id}.obj"), None).await?;
    println!("mesh: {} bytes of OBJ", obj.len());
    let params = call_json(&app, "GET", &format!("/api/v1/params/{mesh_id}"), None).await?;
    println!("re-measured parameters {}", params["params"]);
    if drag_model.is_some() {
        let drag = call_json(
            &app,
            "POST",
            "/api/v1/drag",
            Some(json!({ "mesh_id": mesh_id })),
        )
        .await?;
        println!("drag estimate {}", drag["cd"]);
    }
    Ok(())
}
