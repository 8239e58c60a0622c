use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::json;
use vehiclesdf::autodecoder::{default_decode_grid, train_deepsdf, SdfTrainConfig};
use vehiclesdf::checkpoint::{self, Container};
use vehiclesdf::drag::{
    build_atlas, build_drag_corpus, canny_edges, predict_cd, render_view, train_drag_model,
    BoostConfig, Channel, View,
};
use vehiclesdf::geometry::{marching_cubes, sample_shape, GridSpec, TriangleMesh};
use vehiclesdf::params::{
    augment_dataset, extract_params, train_estimator, AugmentConfig, EstimatorConfig,
    ExtractionConfig, OptimizeConfig,
};
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusManifest, CorpusRanges};
use vehiclesdf_cli::model::{optimize_and_decode, Models};
use vehiclesdf_cli::{router, AppState, ServiceConfig};

use crate::cli::*;

pub const MANIFEST: &str = "manifest.jsonl";
pub const SAMPLES: &str = "samples.vsdf";

fn grid(resolution: usize) -> Result<GridSpec> {
    Ok(GridSpec::new(
        resolution,
        default_decode_grid().half_extent,
    )?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(CorpusManifest::read_jsonl(BufReader::new(f))?)
}

fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TriangleMesh::read_obj(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> Result<Container> {
    Container::load(path).with_context(|| format!("loading {}", path.display()))
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

pub fn gen_corpus(a: &GenCorpus) -> Result<()> {
    let manifest = generate_corpus(a.count, a.seed, &CorpusRanges::default())?;
    let mut text = Vec::new();
    manifest.write_jsonl(&mut text)?;
    write_file(&a.out.join(MANIFEST), &text)?;

    let sets = manifest
        .entries
        .par_iter()
        .map(|e| {
            let car = make_toy_car(&e.spec)?;
            sample_shape(&car.shape, e.shape_id.clone(), a.samples, e.seed)
        })
        .collect::<vehiclesdf::Result<Vec<_>>>()?;
    let mut c = Container::new();
    checkpoint::put_samples(&mut c, &sets)?;
    write_file(&a.out.join(SAMPLES), &c.to_bytes())?;

    if a.meshes {
        let g = grid(a.mesh_resolution)?;
        let meshes = manifest
            .entries
            .par_iter()
            .map(|e| {
                Ok((
                    e.shape_id.clone(),
                    marching_cubes(&make_toy_car(&e.spec)?.shape, &g)?.mesh,
                ))
            })
            .collect::<vehiclesdf::Result<Vec<_>>>()?;
        for (id, mesh) in meshes {
            write_file(
                &a.out.join("meshes").join(format!("{id}.obj")),
                mesh.to_obj_string().as_bytes(),
            )?;
        }
    }
    tracing::info!(count = manifest.len(), out = %a.out.display(), "corpus written");
    Ok(())
}

pub fn train_sdf(a: &TrainSdf) -> Result<()> {
    let samples = checkpoint::get_samples(&load(&a.corpus.join(SAMPLES))?)?;
    let d = SdfTrainConfig::default();
    let config = SdfTrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        latent_dim: a.latent_dim.unwrap_or(d.latent_dim),
        hidden_width: a.hidden_width.unwrap_or(d.hidden_width),
        hidden_layers: a.hidden_layers.unwrap_or(d.hidden_layers),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: a.seed,
        ..d
    };
    tracing::info!(
        shapes = samples.len(),
        epochs = config.epochs,
        "training decoder"
    );
    let trained = train_deepsdf(&samples, &config)?;
    let mut c = Container::new();
    checkpoint::put_decoder(&mut c, &trained.weights, &config)?;
    checkpoint::put_latents(&mut c, &trained.latents)?;
    c.put_json("train_report", &trained.report)?;
    write_file(&a.out, &c.to_bytes())?;
    let last = trained
        .report
        .epochs
        .last()
        .map(|l| l.total())
        .unwrap_or(f64::NAN);
    println!(
        "{}",
        json!({ "final_loss": last, "mean_latent_norm": trained.report.mean_latent_norm, "out": a.out })
    );
    Ok(())
}

pub fn train_estimator_cmd(a: &TrainEstimator) -> Result<()> {
    let input = load(&a.checkpoint)?;
    let weights = checkpoint::get_decoder(&input)?;
    let latents = checkpoint::get_latents(&input)?;
    let base: Vec<_> = latents.into_values().collect();
    let aug_cfg = AugmentConfig {
        grid: grid(a.decode_resolution)?,
        extraction: ExtractionConfig::for_grid(grid(a.decode_resolution)?.cell_size()),
        ..AugmentConfig::new(a.records, a.seed)
    };
    tracing::info!(records = a.records, "augmenting");
    let aug = augment_dataset(&base, &weights, &aug_cfg)?;
    let d = EstimatorConfig::default();
    let est_cfg = EstimatorConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        seed: a.seed,
        ..d
    };
    let (est, metrics) = train_estimator(&aug.records, &est_cfg)?;
    let summary = json!({
        "records": aug.records.len(),
        "attempts": aug.attempts,
        "failures": aug.failures,
        "metrics": metrics,
    });
    // Fresh sections first; everything else carries over from the input.
    let mut c = Container::new();
    checkpoint::put_estimator(&mut c, &est)?;
    c.put_json("estimator_config", &est_cfg)?;
    c.put_json("estimator_report", &summary)?;
    c.merge_missing(&input)?;
    write_file(&a.out, &c.to_bytes())?;
    println!("{summary}");
    Ok(())
}

pub fn optimize(a: &Optimize) -> Result<()> {
    let models = Models::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let config = OptimizeConfig {
        max_steps: a.max_iters,
        tolerance: a.tol,
        ..OptimizeConfig::default()
    };
    let g = grid(a.resolution)?;
    let seeds: Vec<u64> = (0..a.seeds).map(|k| a.seed.wrapping_add(k)).collect();
    let outcomes = seeds
        .par_iter()
        .map(|&s| optimize_and_decode(&models, &a.target, s, &config, &g, &mut |_| {}))
        .collect::<vehiclesdf::Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    for (k, out) in outcomes.iter().enumerate() {
        let mut csv = Vec::new();
        out.trace.write_csv(&mut csv)?;
        write_file(&a.out.join(format!("trace_seed{k}.csv")), &csv)?;
        write_file(
            &a.out.join(format!("mesh_seed{k}.obj")),
            out.mesh.to_obj_string().as_bytes(),
        )?;
        let last = out.trace.final_row();
        runs.push(json!({
            "seed": seeds[k],
            "converged": out.trace.converged,
            "iterations": last.iter,
            "mse": last.mse,
            "final_params": last.params,
            "extracted_params": out.extracted,
            "extracted_mse": out.extracted.map(|p| p.mse(&a.target)),
            "latent_norm": out.latent.norm(),
            "latent": out.latent,
        }));
    }
    let summary = json!({ "target": a.target, "runs": runs });
    write_file(&a.out.join("summary.json"), &pretty(&summary)?)?;
    for r in &runs {
        println!(
            "seed {} mse {:.3e} converged {}",
            r["seed"],
            r["mse"].as_f64().unwrap_or(f64::NAN),
            r["converged"]
        );
    }
    Ok(())
}

pub fn extract(a: &Extract) -> Result<()> {
    let mesh = read_mesh(&a.mesh)?;
    let cfg = ExtractionConfig::for_grid(grid(a.resolution)?.cell_size());
    let (params, landmarks) = extract_params(&mesh, &cfg)?;
    let out = json!({ "params": params, "landmarks": landmarks });
    let bytes = pretty(&out)?;
    if let Some(p) = &a.out {
        write_file(p, &bytes)?;
    }
    std::io::stdout().write_all(&bytes)?;
    Ok(())
}

pub fn render(a: &Render) -> Result<()> {
    let mesh = read_mesh(&a.mesh)?;
    let atlas = build_atlas(&mesh, a.resolution)?;
    write_file(&a.out.join("atlas.png"), &atlas.to_png()?)?;
    for view in View::ATLAS {
        write_file(
            &a.out.join(format!("{}.png", view.name())),
            &atlas.view(view).to_png()?,
        )?;
    }
    let depth = render_view(&mesh, View::Side, a.resolution, Channel::Depth)?;
    write_file(&a.out.join("side_depth.png"), &depth.to_png()?)?;
    let edges = canny_edges(&depth, a.low, a.high)?;
    write_file(&a.out.join("side_canny.png"), &edges.to_png()?)?;
    println!("{}", json!({ "edge_pixels": edges.count(), "out": a.out }));
    Ok(())
}

pub fn drag_train(a: &DragTrain) -> Result<()> {
    let manifest = match &a.manifest {
        Some(p) => read_manifest(p)?,
        None => generate_corpus(a.count, a.seed, &CorpusRanges::default())?,
    };
    let cars: Vec<_> = manifest
        .entries
        .iter()
        .map(|e| (e.shape_id.clone(), e.spec))
        .collect();
    let records = build_drag_corpus(&cars, &grid(a.mesh_resolution)?, !a.no_augment)?;
    let d = BoostConfig::default();
    let cfg = BoostConfig {
        trees: a.trees.unwrap_or(d.trees),
        depth: a.depth.unwrap_or(d.depth),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        seed: a.seed,
    };
    let data: Vec<_> = records.iter().map(|r| (r.features.clone(), r.cd)).collect();
    let (model, metrics) = train_drag_model(&data, &cfg)?;
    let mut c = Container::new();
    checkpoint::put_drag_model(&mut c, &model)?;
    c.put_json("drag_config", &cfg)?;
    c.put_json("drag_metrics", &metrics)?;
    write_file(&a.out, &c.to_bytes())?;
    println!(
        "{}",
        json!({
            "records": records.len(),
            "test_r2": metrics.test.r2,
            "test_mse": metrics.test.mse,
            "validation_r2": metrics.validation.r2,
        })
    );
    Ok(())
}

pub fn drag_predict(a: &DragPredict) -> Result<()> {
    let model = checkpoint::get_drag_model(&load(&a.model)?)?;
    let mesh = read_mesh(&a.mesh)?;
    let cd = predict_cd(&model, &mesh)?;
    println!("{}", json!({ "cd": cd }));
    Ok(())
}

pub fn serve(a: &Serve) -> Result<()> {
    let mut config = ServiceConfig::load(a.config.as_deref())?;
    if let Some(h) = &a.host {
        config.host = h.clone();
    }
    if let Some(p) = a.port {
        config.port = p;
    }
    if let Some(d) = &a.data_dir {
        config.data_dir = d.clone();
    }
    if a.checkpoint.is_some() {
        config.checkpoint = a.checkpoint.clone();
    }
    if a.drag_model.is_some() {
        config.drag_model = a.drag_model.clone();
    }
    if a.manifest.is_some() {
        config.manifest = a.manifest.clone();
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let addr = format!("{}:{}", config.host, config.port);
    let state = AppState::from_config(config)?;
    if state.models.is_none() {
        tracing::warn!("no checkpoint configured; optimization requests will return 503");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::TrainSdf(a) => train_sdf(a),
        Command::TrainEstimator(a) => train_estimator_cmd(a),
        Command::Optimize(a) => optimize(a),
        Command::Extract(a) => extract(a),
        Command::Render(a) => render(a),
        Command::DragTrain(a) => drag_train(a),
        Command::DragPredict(a) => drag_predict(a),
        Command::Serve(a) => serve(a),
    }
}
