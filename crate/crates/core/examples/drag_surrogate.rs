//! Label toy cars with the synthetic drag oracle, fit the boosted-tree
//! surrogate on atlas features and report held-out accuracy.
//!
//! cargo run --release -p vehiclesdf --example drag_surrogate -- [cars]

use vehiclesdf::drag::{
    build_drag_corpus, predict_cd, toy_car_mesh, train_drag_model, BoostConfig,
};
use vehiclesdf::geometry::GridSpec;
use vehiclesdf::toycar::{generate_corpus, CorpusRanges};

fn main() -> vehiclesdf::Result<()> {
    let cars: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let manifest = generate_corpus(cars + 1, 21, &CorpusRanges::default())?;
    let specs: Vec<_> = manifest
        .entries
        .iter()
        .map(|e| (e.shape_id.clone(), e.spec))
        .collect();
    let (train, unseen) = specs.split_at(cars);
    let grid = GridSpec::new(64, 0.95)?;

    let records = build_drag_corpus(train, &grid, false)?;
    let cds: Vec<f64> = records.iter().map(|r| r.cd).collect();
    println!(
        "{} labelled cars, cd range {:.3}..{:.3}",
        records.len(),
        cds.iter().copied().fold(f64::INFINITY, f64::min),
        cds.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    );

    let data: Vec<_> = records.into_iter().map(|r| (r.features, r.cd)).collect();
    let (model, metrics) = train_drag_model(&data, &BoostConfig::default())?;
    for (name, m) in [
        ("train", metrics.train),
        ("validation", metrics.validation),
        ("test", metrics.test),
    ] {
        println!(
            "{name:<10} n={:<4} R2 {:.4}  MSE {:.2e}",
            m.count, m.r2, m.mse
        );
    }

    let (id, spec) = &unseen[0];
    let mesh = toy_car_mesh(spec, &grid, false, false)?;
    let oracle = build_drag_corpus(&unseen[..1], &grid, false)?[0].cd;
    println!(
        "{id}: predicted cd {:.4}, oracle {:.4}",
        predict_cd(&model, &mesh)?,
        oracle
    );
    Ok(())
}
