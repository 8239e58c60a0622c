//! Measuring the seven parameters on a triangle mesh.
//!
//! 1. Floor point: the lowest vertex near the middle of the length.
//! 2. Tire points: vertices below the floor point, split into the front
//!    (`x < x_mid`) and rear halves; from each half take the lowest, the
//!    front-most and the rear-most vertex.
//! 3. A circle through the three points gives each tire centre and radius.
//! 4. Overall extents, the width inside a band at tire-centre height, and
//!    the ground line under the tires give the rest.

use serde::{Deserialize, Serialize};

use super::GeomParams;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, TriangleMesh};

/// Vertex-selection tolerances, in the mesh's own units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Half width of the band around the mid-length used to find the floor point.
    pub center_band: f64,
    /// Tire points must lie this far below the floor point.
    pub floor_tolerance: f64,
    /// Half height of the band around the tire-centre height used for the width.
    pub width_band: f64,
}

impl ExtractionConfig {
    /// Tolerances for a mesh extracted with lattice cell size `h`.
    pub fn for_grid(h: f64) -> Self {
        Self {
            center_band: h,
            floor_tolerance: h,
            width_band: h,
        }
    }

    /// Same tolerances for a mesh scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            center_band: self.center_band * factor,
            floor_tolerance: self.floor_tolerance * factor,
            width_band: self.width_band * factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("center_band", self.center_band),
            ("floor_tolerance", self.floor_tolerance),
            ("width_band", self.width_band),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for ExtractionConfig {
    /// Matches a 128³ lattice over `[-0.95, 0.95]³`.
    fn default() -> Self {
        Self::for_grid(1.9 / 127.0)
    }
}

/// Intermediate measurements, in mesh units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub floor_point: Point3,
    /// `(x, y)` of the front tire centre.
    pub front_center: [f64; 2],
    pub front_radius: f64,
    pub rear_center: [f64; 2],
    pub rear_radius: f64,
    pub ground_y: f64,
    pub length: f64,
}

/// Circle through three points in the x–y plane.
pub fn fit_circle_3pts(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Result<([f64; 2], f64)> {
    // Work relative to `a` to keep the determinant well scaled.
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let cross = bx * cy - by * cx;
    if cross.abs() / 2.0 <= 1e-12 {
        return Err(Error::DegenerateGeometry(format!(
            "points {a:?}, {b:?}, {c:?} are collinear"
        )));
    }
    let d = 2.0 * cross;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let radius = (ux * ux + uy * uy).sqrt();
    Ok(([a[0] + ux, a[1] + uy], radius))
}

/// Lexicographic minimum over `keys(v)`.
fn select<'a, const K: usize>(
    points: &[&'a Point3],
    keys: impl Fn(&Point3) -> [f64; K],
) -> Option<&'a Point3> {
    points.iter().copied().min_by(|p, q| {
        keys(p)
            .iter()
            .zip(keys(q).iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

fn fit_tire(points: &[&Point3], which: &str) -> Result<([f64; 2], f64)> {
    if points.is_empty() {
        return Err(Error::ExtractionFailure(format!(
            "no tire points below the floor in the {which} half"
        )));
    }
    let lowest = select(points, |p| [p.y, p.x]).expect("non-empty");
    let first = select(points, |p| [p.x, p.y]).expect("non-empty");
    let last = select(points, |p| [-p.x, p.y]).expect("non-empty");
    fit_circle_3pts([lowest.x, lowest.y], [first.x, first.y], [last.x, last.y])
}

/// Measure a mesh in the vehicle frame (front at smaller x, y up).
pub fn extract_params(
    mesh: &TriangleMesh,
    cfg: &ExtractionConfig,
) -> Result<(GeomParams, Landmarks)> {
    cfg.validate()?;
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| invalid("cannot extract parameters from an empty mesh"))?;
    let length = hi.x - lo.x;
    if length <= 0.0 {
        return Err(Error::DegenerateGeometry("mesh has zero length".into()));
    }
    let mid = 0.5 * (lo.x + hi.x);

    let band: Vec<&Point3> = mesh
        .vertices
        .iter()
        .filter(|v| (v.x - mid).abs() <= cfg.center_band)
        .collect();
    let floor_point = *select(&band, |p| [p.y, (p.x - mid).abs(), p.z])
        .ok_or_else(|| Error::ExtractionFailure("no vertices near the mid-length".into()))?;

    let below = floor_point.y - cfg.floor_tolerance;
    let (front, rear): (Vec<&Point3>, Vec<&Point3>) = mesh
        .vertices
        .iter()
        .filter(|v| v.y < below)
        .partition(|v| v.x < mid);
    let (front_center, front_radius) = fit_tire(&front, "front")?;
    let (rear_center, rear_radius) = fit_tire(&rear, "rear")?;

    let ground_y = 0.5 * ((front_center[1] - front_radius) + (rear_center[1] - rear_radius));
    let (zmin, zmax) = mesh
        .vertices
        .iter()
        .filter(|v| (v.y - front_center[1]).abs() <= cfg.width_band)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v.z), b.max(v.z))
        });
    if zmin > zmax {
        return Err(Error::ExtractionFailure(
            "no vertices at tire-centre height".into(),
        ));
    }

    let params = GeomParams::from_measurements(
        length,
        hi.y - lo.y,
        zmax - zmin,
        floor_point.y - ground_y,
        rear_center[0] - front_center[0],
        front_center[0] - lo.x,
        hi.x - rear_center[0],
    )?;
    Ok((
        params,
        Landmarks {
            floor_point,
            front_center,
            front_radius,
            rear_center,
            rear_radius,
            ground_y,
            length,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn circumcircle_examples() {
        let (c, r) = fit_circle_3pts([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
        let (c, r) = fit_circle_3pts([1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]).unwrap();
        assert!(c[0].abs() < 1e-15 && c[1].abs() < 1e-15);
        assert!((r - 1.0).abs() < 1e-15);
        assert!(matches!(
            fit_circle_3pts([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    proptest! {
        #[test]
        fn circumcircle_residuals(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64,
            cx in -5.0..5.0f64, cy in -5.0..5.0f64,
        ) {
            let area = ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax)).abs() / 2.0;
            prop_assume!(area > 1e-3);
            let (c, r) = fit_circle_3pts([ax, ay], [bx, by], [cx, cy]).unwrap();
            for p in [[ax, ay], [bx, by], [cx, cy]] {
                let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                prop_assert!((d - r).abs() < 1e-9 * r.max(1.0));
            }
        }
    }

    #[test]
    fn box_without_wheels_fails() {
        let m = TriangleMesh::cuboid(Point3::new(-1.0, 0.1, -0.3), Point3::new(1.0, 0.5, 0.3));
        assert!(matches!(
            extract_params(&m, &ExtractionConfig::for_grid(0.05)),
            Err(Error::ExtractionFailure(_))
        ));
    }
}
