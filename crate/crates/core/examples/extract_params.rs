//! Measure the seven geometric parameters on a mesh, print the landmarks
//! the extractor found and check that scaling, translating or mirroring the
//! mesh leaves the result unchanged.
//!
//! cargo run --release -p vehiclesdf --example extract_params -- [mesh.obj]

use std::fs::File;
use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vehiclesdf::geometry::{marching_cubes, GridSpec, Point3, TriangleMesh};
use vehiclesdf::params::{extract_params, ExtractionConfig, PARAM_NAMES};
use vehiclesdf::toycar::{make_toy_car, sample_spec, CorpusRanges};

fn main() -> vehiclesdf::Result<()> {
    let grid = GridSpec::new(128, 0.95)?;
    let cfg = ExtractionConfig::for_grid(grid.cell_size());
    let (mesh, truth) = match std::env::args().nth(1) {
        Some(path) => (
            TriangleMesh::read_obj(BufReader::new(File::open(path)?))?,
            None,
        ),
        None => {
            let spec = sample_spec(&CorpusRanges::default(), &mut ChaCha8Rng::seed_from_u64(3))?;
            let car = make_toy_car(&spec)?;
            (marching_cubes(&car.shape, &grid)?.mesh, Some(car.params))
        }
    };

    let (params, marks) = extract_params(&mesh, &cfg)?;
    println!("floor point      {:?}", marks.floor_point);
    println!(
        "front tire       centre {:?} radius {:.4}",
        marks.front_center, marks.front_radius
    );
    println!(
        "rear tire        centre {:?} radius {:.4}",
        marks.rear_center, marks.rear_radius
    );
    println!();
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        match &truth {
            Some(t) => println!("{name:<18} {:.5}  (true {:.5})", params.0[k], t.0[k]),
            None => println!("{name:<18} {:.5}", params.0[k]),
        }
    }

    let variants = [
        (
            "scaled x1.7",
            extract_params(&mesh.scaled(1.7), &cfg.scaled(1.7))?.0,
        ),
        (
            "translated",
            extract_params(&mesh.translated(Point3::new(0.3, -0.2, 0.1)), &cfg)?.0,
        ),
        ("mirrored", extract_params(&mesh.mirrored_z(), &cfg)?.0),
    ];
    println!();
    for (name, p) in variants {
        println!("{name:<12} max deviation {:.2e}", p.max_abs_diff(&params));
    }
    Ok(())
}
