//! Generate a small toy-car corpus, mesh each car and compare the extracted
//! parameters with the generator's ground truth.
//!
//! cargo run --release -p vehiclesdf --example toy_corpus -- [count] [out_dir]

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use vehiclesdf::geometry::{marching_cubes, watertight_check, GridSpec};
use vehiclesdf::params::{extract_params, ExtractionConfig};
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusRanges};

fn main() -> vehiclesdf::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let out = args.next().map(PathBuf::from);

    let manifest = generate_corpus(count, 7, &CorpusRanges::default())?;
    let grid = GridSpec::new(128, 0.95)?;
    println!(
        "{:<10} {:>6} {:>10} {:>10}",
        "shape", "tris", "watertight", "max err"
    );
    for entry in &manifest.entries {
        let car = make_toy_car(&entry.spec)?;
        let mesh = marching_cubes(&car.shape, &grid)?.mesh;
        let (params, _) = extract_params(&mesh, &ExtractionConfig::for_grid(grid.cell_size()))?;
        let tight = watertight_check(&mesh).is_ok();
        println!(
            "{:<10} {:>6} {:>10} {:>10.2e}",
            entry.shape_id,
            mesh.triangles.len(),
            tight,
            params.max_abs_diff(&entry.true_params)
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            mesh.write_obj(BufWriter::new(File::create(
                dir.join(format!("{}.obj", entry.shape_id)),
            )?))?;
        }
    }
    if let Some(dir) = &out {
        manifest.write_jsonl(BufWriter::new(File::create(dir.join("manifest.jsonl"))?))?;
        println!("meshes and manifest in {}", dir.display());
    }
    Ok(())
}
