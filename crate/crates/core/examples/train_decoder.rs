//! Train a small auto-decoder on sampled toy cars, decode every training
//! latent back to a mesh and report how well the meshes reproduce the
//! generator's parameters. A latent inferred for an unseen car is decoded
//! the same way.
//!
//! cargo run --release -p vehiclesdf --example train_decoder -- [shapes] [epochs]

use rayon::prelude::*;

use vehiclesdf::autodecoder::{
    default_decode_grid, infer_latent, train_deepsdf, InferConfig, SdfTrainConfig,
};
use vehiclesdf::geometry::sample_shape;
use vehiclesdf::params::{measure_latent, ExtractionConfig};
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusRanges};

fn main() -> vehiclesdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let shapes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let manifest = generate_corpus(shapes + 1, 11, &CorpusRanges::default())?;
    let (train, held_out) = manifest.entries.split_at(shapes);
    let sample = |e: &vehiclesdf::toycar::ManifestEntry| {
        sample_shape(
            &make_toy_car(&e.spec)?.shape,
            e.shape_id.clone(),
            5000,
            e.seed,
        )
    };
    let sets = train
        .par_iter()
        .map(sample)
        .collect::<vehiclesdf::Result<Vec<_>>>()?;

    let config = SdfTrainConfig {
        epochs,
        ..Default::default()
    };
    let trained = train_deepsdf(&sets, &config)?;
    for (k, loss) in trained.report.epochs.iter().enumerate() {
        if k % 5 == 0 || k + 1 == epochs {
            println!("epoch {k:>3}  data {:.3e}  reg {:.3e}", loss.data, loss.reg);
        }
    }
    println!(
        "trained in {:.1}s, mean latent norm {:.3}",
        trained.report.wall_time_s, trained.report.mean_latent_norm
    );

    let grid = default_decode_grid();
    let cfg = ExtractionConfig::for_grid(grid.cell_size());
    let errors: Vec<Option<f64>> = train
        .par_iter()
        .map(|e| {
            let z = &trained.latents[&e.shape_id];
            Ok(measure_latent(&trained.weights, z, &grid, &cfg)?.map(|p| p.mse(&e.true_params)))
        })
        .collect::<vehiclesdf::Result<_>>()?;
    let ok: Vec<f64> = errors.iter().flatten().copied().collect();
    println!(
        "reconstructed {}/{} shapes, parameter MSE mean {:.2e} max {:.2e}",
        ok.len(),
        errors.len(),
        ok.iter().sum::<f64>() / ok.len().max(1) as f64,
        ok.iter().copied().fold(0.0, f64::max)
    );

    let unseen = &held_out[0];
    let (z, report) = infer_latent(&trained.weights, &sample(unseen)?, &InferConfig::default())?;
    let measured = measure_latent(&trained.weights, &z, &grid, &cfg)?;
    println!(
        "unseen {}: fit loss {:.2e} -> {:.2e}, parameter MSE {}",
        unseen.shape_id,
        report.initial_loss,
        report.final_loss,
        measured.map_or("n/a".into(), |p| format!(
            "{:.2e}",
            p.mse(&unseen.true_params)
        ))
    );
    Ok(())
}
