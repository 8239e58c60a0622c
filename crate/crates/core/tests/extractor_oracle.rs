use rayon::prelude::*;
use vehiclesdf::geometry::{marching_cubes, watertight_check, GridSpec, Point3, TriangleMesh};
use vehiclesdf::params::{extract_params, ExtractionConfig, GeomParams, PARAM_NAMES};
use vehiclesdf::toycar::{generate_corpus, make_toy_car, CorpusRanges};

const CARS: usize = 100;
const RESOLUTION: usize = 128;

struct Case {
    id: String,
    mesh: TriangleMesh,
    truth: GeomParams,
    length: f64,
}

fn cases() -> Vec<Case> {
    let manifest = generate_corpus(CARS, 2024, &CorpusRanges::default()).unwrap();
    let grid = GridSpec::new(RESOLUTION, 0.95).unwrap();
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let car = make_toy_car(&e.spec).unwrap();
            Case {
                id: e.shape_id.clone(),
                mesh: marching_cubes(&car.shape, &grid).unwrap().mesh,
                truth: e.true_params,
                length: car.normalized_length(),
            }
        })
        .collect()
}

fn extract(mesh: &TriangleMesh, cfg: &ExtractionConfig) -> GeomParams {
    extract_params(mesh, cfg).unwrap().0
}

/// Both tests share one meshing pass.
#[test]
fn extractor_matches_construction_truth_and_is_invariant() {
    let grid = GridSpec::new(RESOLUTION, 0.95).unwrap();
    let h = grid.cell_size();
    let tol = (2.0 * h).max(0.01);
    let cfg = ExtractionConfig::for_grid(h);
    let cases = cases();
    assert_eq!(cases.len(), CARS);

    let failures: Vec<String> = cases
        .par_iter()
        .flat_map_iter(|c| {
            let mut out = Vec::new();
            if !watertight_check(&c.mesh).is_ok() {
                out.push(format!("{}: not watertight", c.id));
            }
            let p = extract(&c.mesh, &cfg);
            // Parameters are ratios to body length; compare in model units.
            for k in 0..7 {
                let err = (p.0[k] - c.truth.0[k]).abs() * c.length;
                if err > tol {
                    out.push(format!(
                        "{} {}: error {err:.4} > {tol:.4}",
                        c.id, PARAM_NAMES[k]
                    ));
                }
            }

            let checks = [
                ("scale", c.mesh.scaled(1.7), cfg.scaled(1.7)),
                (
                    "translation",
                    c.mesh.translated(Point3::new(0.3, -0.2, 0.15)),
                    cfg.clone(),
                ),
                ("mirror", c.mesh.mirrored_z(), cfg.clone()),
            ];
            for (name, mesh, cfg) in checks {
                let q = extract(&mesh, &cfg);
                let d = p.max_abs_diff(&q);
                if d > 1e-6 {
                    out.push(format!("{} {name}: differs by {d:e}", c.id));
                }
            }
            out
        })
        .collect();
    assert!(
        failures.is_empty(),
        "{} failures:\n{}",
        failures.len(),
        failures.join("\n")
    );
}

#[test]
fn empty_mesh_is_an_error() {
    let cfg = ExtractionConfig::for_grid(0.01);
    assert!(extract_params(&TriangleMesh::default(), &cfg).is_err());
}
