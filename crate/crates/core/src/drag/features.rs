//! Fixed-length descriptors of a normal atlas, and the synthetic drag label.

use super::render::{NormalAtlas, View, ViewImage};
use crate::error::{invalid, Result};

/// Cells per side of the per-view averaging grid.
pub const FEATURE_GRID: usize = 8;
/// `6 * 8 * 8 * 3` cell normals, 6 occupancies, 2 aspect ratios.
pub const FEATURE_LEN: usize = 6 * FEATURE_GRID * FEATURE_GRID * 3 + 6 + 2;

/// Mirror of `img` in the horizontal image axis with the horizontal normal
/// component negated, as a pixel lookup.
fn mirrored(img: &ViewImage, r: usize, c: usize) -> [f64; 3] {
    let p = img.pixel(r, img.width - 1 - c);
    [-p[0], p[1], p[2]]
}

/// Cell means of `(a + mirror(b)) / 2`. With `b = a` this symmetrizes a view
/// whose horizontal axis is the car's lateral axis; with the opposite side
/// view it pairs left and right. Either way a car reflected in `z` yields
/// the same numbers.
fn symmetric_cells(a: &ViewImage, b: &ViewImage, out: &mut Vec<f64>) {
    let g = FEATURE_GRID;
    let mut sums = vec![[0.0f64; 3]; g * g];
    let mut counts = vec![0usize; g * g];
    for r in 0..a.height {
        for c in 0..a.width {
            let p = a.pixel(r, c);
            let q = mirrored(b, r, c);
            let cell = (r * g / a.height) * g + c * g / a.width;
            for k in 0..3 {
                sums[cell][k] += (p[k] + q[k]) * 0.5;
            }
            counts[cell] += 1;
        }
    }
    for (s, n) in sums.iter().zip(&counts) {
        let n = (*n).max(1) as f64;
        out.extend(s.iter().map(|v| v / n));
    }
}

fn occupancy(img: &ViewImage) -> f64 {
    img.foreground_count() as f64 / (img.width * img.height) as f64
}

fn aspect(img: &ViewImage) -> f64 {
    match img.silhouette_bounds() {
        Some((r0, r1, c0, c1)) => (c1 - c0 + 1) as f64 / (r1 - r0 + 1) as f64,
        None => 0.0,
    }
}

/// Cell normals per view in atlas order, occupancies in atlas order with
/// left and right averaged, then the width/height ratios of the side and
/// front silhouettes.
pub fn drag_features(atlas: &NormalAtlas) -> Vec<f64> {
    let mut f = Vec::with_capacity(FEATURE_LEN);
    let left = atlas.view(View::Left);
    let right = atlas.view(View::Right);
    for view in View::ATLAS {
        let img = atlas.view(view);
        match view {
            View::Left => symmetric_cells(left, right, &mut f),
            View::Right => symmetric_cells(right, left, &mut f),
            _ => symmetric_cells(img, img, &mut f),
        }
    }
    let sides = 0.5 * (occupancy(left) + occupancy(right));
    for view in View::ATLAS {
        f.push(match view {
            View::Left | View::Right => sides,
            v => occupancy(atlas.view(v)),
        });
    }
    f.push(aspect(left));
    f.push(aspect(atlas.view(View::Front)));
    debug_assert_eq!(f.len(), FEATURE_LEN);
    f
}

/// Components of the synthetic drag label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleTerms {
    pub front_occupancy: f64,
    pub rear_taper: f64,
    pub cd: f64,
}

/// `0.10 + 0.50 * front_occupancy + 0.30 * (1 - rear_taper)`, where front
/// occupancy is the silhouette fraction of the front view and rear taper is
/// the side silhouette area in the rearmost quarter of its bounding box
/// divided by that quarter's area.
pub fn synthetic_cd(atlas: &NormalAtlas) -> Result<OracleTerms> {
    let front = atlas.view(View::Front);
    let side = atlas.view(View::Side);
    let (r0, r1, c0, c1) = side
        .silhouette_bounds()
        .ok_or_else(|| invalid("side silhouette is empty"))?;
    if front.foreground_count() == 0 {
        return Err(invalid("front silhouette is empty"));
    }
    let width = c1 - c0 + 1;
    let quarter = ((width as f64 * 0.25).round() as usize).max(1);
    let rows = r1 - r0 + 1;
    // The rear (+x) is on the right of the side view.
    let filled = (r0..=r1)
        .flat_map(|r| (c1 + 1 - quarter..=c1).map(move |c| (r, c)))
        .filter(|&(r, c)| side.is_foreground(r, c))
        .count();
    let rear_taper = filled as f64 / (quarter * rows) as f64;
    let front_occupancy = occupancy(front);
    Ok(OracleTerms {
        front_occupancy,
        rear_taper,
        cd: 0.10 + 0.50 * front_occupancy + 0.30 * (1.0 - rear_taper),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drag::render::build_atlas;
    use crate::geometry::{Point3, TriangleMesh};

    #[test]
    fn empty_atlas_is_all_zero() {
        let a = build_atlas(&TriangleMesh::default(), 32).unwrap();
        let f = drag_features(&a);
        assert_eq!(f.len(), FEATURE_LEN);
        assert!(f.iter().all(|&v| v == 0.0));
        assert!(synthetic_cd(&a).is_err());
    }

    #[test]
    fn sphere_occupancies_match() {
        let a = build_atlas(&TriangleMesh::icosphere(0.8, 3), 64).unwrap();
        let f = drag_features(&a);
        let occ = &f[FEATURE_LEN - 8..FEATURE_LEN - 2];
        for &o in occ {
            assert!((o - occ[0]).abs() / occ[0] < 0.01, "{occ:?}");
        }
    }

    #[test]
    fn box_has_full_rear_quarter() {
        let m = TriangleMesh::cuboid(Point3::new(-0.8, -0.2, -0.3), Point3::new(0.8, 0.2, 0.3));
        let t = synthetic_cd(&build_atlas(&m, 64).unwrap()).unwrap();
        assert_eq!(t.rear_taper, 1.0);
        assert!((t.cd - (0.10 + 0.50 * t.front_occupancy)).abs() < 1e-15);
    }

    #[test]
    fn larger_frontal_area_raises_cd() {
        let small = TriangleMesh::cuboid(Point3::new(-0.8, -0.2, -0.2), Point3::new(0.8, 0.2, 0.2));
        let large = TriangleMesh::cuboid(Point3::new(-0.8, -0.2, -0.3), Point3::new(0.8, 0.2, 0.3));
        let a = synthetic_cd(&build_atlas(&small, 64).unwrap()).unwrap();
        let b = synthetic_cd(&build_atlas(&large, 64).unwrap()).unwrap();
        assert!(b.cd > a.cd);
    }

    #[test]
    fn features_are_mirror_stable() {
        let m = TriangleMesh::icosphere(0.7, 2)
            .map_vertices(|v| Point3::new(v.x, v.y, v.z + 0.3 * v.x * v.x));
        let a = drag_features(&build_atlas(&m, 48).unwrap());
        let b = drag_features(&build_atlas(&m.mirrored_z(), 48).unwrap());
        assert_eq!(a, b);
    }
}
