//! The whole parameter-guided loop at small scale: train a decoder, label
//! interpolated latents by meshing and measuring them, fit the parameter
//! estimator, then search latent space for a car with the requested
//! parameters from several starting points.
//!
//! cargo run --release -p vehiclesdf --example latent_optimization -- [records] [seeds]

use rayon::prelude::*;

use vehiclesdf::autodecoder::{default_decode_grid, train_deepsdf, SdfTrainConfig};
use vehiclesdf::geometry::sample_shape;
use vehiclesdf::params::{
    augment_dataset, measure_latent, optimize_latent_to_target, train_estimator, AugmentConfig,
    EstimatorConfig, ExtractionConfig, GeomParams, OptimizeConfig,
};
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusRanges};

fn main() -> vehiclesdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let records: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let manifest = generate_corpus(32, 0, &CorpusRanges::default())?;
    let sets = manifest
        .entries
        .par_iter()
        .map(|e| {
            sample_shape(
                &make_toy_car(&e.spec)?.shape,
                e.shape_id.clone(),
                5000,
                e.seed,
            )
        })
        .collect::<vehiclesdf::Result<Vec<_>>>()?;
    let trained = train_deepsdf(&sets, &SdfTrainConfig::default())?;
    println!("decoder trained in {:.0}s", trained.report.wall_time_s);

    let latents: Vec<_> = trained.latents.values().cloned().collect();
    let augmented = augment_dataset(&latents, &trained.weights, &AugmentConfig::new(records, 0))?;
    println!(
        "{} records from {} attempts ({} unusable meshes)",
        augmented.records.len(),
        augmented.attempts,
        augmented.failures
    );
    let (est, metrics) = train_estimator(&augmented.records, &EstimatorConfig::default())?;
    println!(
        "estimator test MSE {:.2e}, R2 {:.4}",
        metrics.test.mse, metrics.test.r2
    );

    let target = GeomParams([1.0, 0.28, 0.43, 0.037, 0.6, 0.2, 0.2]);
    let grid = default_decode_grid();
    let cfg = ExtractionConfig::for_grid(grid.cell_size());
    println!(
        "{:>4} {:>6} {:>10} {:>12} {:>8}",
        "seed", "rows", "est MSE", "mesh MSE", "|z|"
    );
    for seed in 0..seeds {
        let (z, trace) =
            optimize_latent_to_target(&est, &target, seed, &OptimizeConfig::default())?;
        let mesh_mse = measure_latent(&trained.weights, &z, &grid, &cfg)?.map(|p| p.mse(&target));
        println!(
            "{seed:>4} {:>6} {:>10.2e} {:>12} {:>8.3}",
            trace.rows.len(),
            trace.final_row().mse,
            mesh_mse.map_or("n/a".into(), |m| format!("{m:.2e}")),
            z.norm()
        );
    }
    Ok(())
}
