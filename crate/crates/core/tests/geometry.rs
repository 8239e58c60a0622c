use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vehiclesdf::geometry::{
    marching_cubes, marching_cubes_with, watertight_check, GridSpec, Point3, Primitive, Sampling,
    Shape, ShapeField,
};
use vehiclesdf::params::fit_circle_3pts;

fn sphere(radius: f64, centre: Point3) -> Shape {
    Shape::primitive(Primitive::Sphere { radius })
        .unwrap()
        .translated([centre.x, centre.y, centre.z])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sphere_vertices_lie_within_two_cells(
        radius in 0.25f64..0.8,
        cx in -0.1f64..0.1,
        cy in -0.1f64..0.1,
        cz in -0.1f64..0.1,
        resolution in 20usize..72,
    ) {
        let centre = Point3::new(cx, cy, cz);
        let grid = GridSpec::new(resolution, 0.95).unwrap();
        let h = grid.cell_size();
        let iso = marching_cubes(&sphere(radius, centre), &grid).unwrap();
        prop_assert!(!iso.mesh.is_empty());
        prop_assert!(!iso.touches_boundary);
        for v in &iso.mesh.vertices {
            let r = ((v - centre).norm() - radius).abs();
            prop_assert!(r < 2.0 * h, "residual {} at h {}", r, h);
        }
        prop_assert!(watertight_check(&iso.mesh).is_ok());
    }

    #[test]
    fn narrow_band_matches_dense_on_distance_fields(
        radius in 0.3f64..0.7,
        cx in -0.1f64..0.1,
        resolution in 24usize..56,
    ) {
        let s = sphere(radius, Point3::new(cx, 0.0, 0.0));
        let grid = GridSpec::new(resolution, 0.95).unwrap();
        let dense = marching_cubes(&s, &grid).unwrap();
        let band = marching_cubes_with(&s, &grid, Sampling::DEFAULT_NARROW_BAND).unwrap();
        prop_assert_eq!(dense.mesh, band.mesh);
    }
}

#[test]
fn sphere_of_radius_0_4_is_watertight() {
    let grid = GridSpec::new(64, 1.0).unwrap();
    let iso = marching_cubes(&sphere(0.4, Point3::zeros()), &grid).unwrap();
    assert!(watertight_check(&iso.mesh).is_ok());
    let expected = 4.0 / 3.0 * std::f64::consts::PI * 0.4f64.powi(3);
    assert!((iso.mesh.volume() - expected).abs() / expected < 0.02);
}

#[test]
fn circle_fit_residuals_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut fitted = 0;
    while fitted < 1000 {
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let r: f64 = rng.random_range(0.05..2.0);
        let mut angles: Vec<f64> = (0..3)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let min_gap = angles
            .windows(2)
            .map(|w| w[1] - w[0])
            .chain([angles[0] + std::f64::consts::TAU - angles[2]])
            .fold(f64::INFINITY, f64::min);
        if min_gap < 0.05 {
            continue;
        }
        let pts: Vec<[f64; 2]> = angles
            .iter()
            .map(|a| [c[0] + r * a.cos(), c[1] + r * a.sin()])
            .collect();
        let (fc, fr) = fit_circle_3pts(pts[0], pts[1], pts[2]).unwrap();
        for p in &pts {
            let d = ((p[0] - fc[0]).powi(2) + (p[1] - fc[1]).powi(2)).sqrt();
            worst = worst.max((d - fr).abs());
        }
        worst = worst.max((fr - r).abs());
        fitted += 1;
    }
    assert!(worst < 1e-9, "worst residual {worst:e}");
}

#[test]
fn collinear_points_are_rejected() {
    assert!(fit_circle_3pts([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]).is_err());
    assert!(fit_circle_3pts([0.0, 0.0], [0.0, 0.0], [2.0, 1.0]).is_err());
}

#[test]
fn field_bounding_radius_covers_sphere() {
    let s = sphere(0.5, Point3::new(0.1, 0.0, 0.0));
    assert!(s.bounding_radius() >= 0.6 - 1e-12);
}
