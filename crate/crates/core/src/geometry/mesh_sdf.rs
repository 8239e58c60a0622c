//! Signed distance to a watertight triangle mesh: exact unsigned distance to
//! the nearest triangle, sign from ray-crossing parity.

use rand::Rng;
use rayon::prelude::*;

use super::field::ShapeField;
use super::mesh::{watertight_check, TriangleMesh, Watertightness};
use super::Point3;
use crate::error::{Error, Result};

const RAY_DIRECTIONS: [[f64; 3]; 4] = [
    [0.577_350_3, 0.621_774_7, 0.529_412_1],
    [-0.312_904_6, 0.835_120_5, -0.452_354_1],
    [0.748_392_1, -0.221_958_4, 0.625_283_9],
    [-0.455_213_8, -0.613_442_7, 0.645_481_3],
];
const GRAZE_EPS: f64 = 1e-9;

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

enum Crossing {
    Miss,
    Hit,
    Grazing,
}

fn ray_triangle(origin: &Point3, dir: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Crossing {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= GRAZE_EPS * scale {
        // Ray parallel to the plane: only a problem if it lies in it.
        let n = e1.cross(&e2);
        return if (origin - a).dot(&n).abs() <= GRAZE_EPS * scale {
            Crossing::Grazing
        } else {
            Crossing::Miss
        };
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    if !(-GRAZE_EPS..=1.0 + GRAZE_EPS).contains(&u) {
        return Crossing::Miss;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -GRAZE_EPS || u + v > 1.0 + GRAZE_EPS {
        return Crossing::Miss;
    }
    let t = e2.dot(&qvec) * inv;
    if t <= 0.0 {
        return Crossing::Miss;
    }
    let on_boundary =
        u.abs() <= GRAZE_EPS || v.abs() <= GRAZE_EPS || (1.0 - u - v).abs() <= GRAZE_EPS;
    if on_boundary {
        Crossing::Grazing
    } else {
        Crossing::Hit
    }
}

fn is_inside(mesh: &TriangleMesh, p: &Point3) -> Result<bool> {
    'dirs: for d in RAY_DIRECTIONS {
        let dir = Point3::new(d[0], d[1], d[2]).normalize();
        let mut crossings = 0usize;
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(t);
            match ray_triangle(p, &dir, &a, &b, &c) {
                Crossing::Miss => {}
                Crossing::Hit => crossings += 1,
                Crossing::Grazing => continue 'dirs,
            }
        }
        return Ok(crossings % 2 == 1);
    }
    Err(Error::RayParity(p.x, p.y, p.z))
}

fn unsigned_distance(mesh: &TriangleMesh, p: &Point3) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.triangle(t);
            (closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn signed_distance(mesh: &TriangleMesh, p: &Point3) -> Result<f64> {
    let d = unsigned_distance(mesh, p);
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(if is_inside(mesh, p)? { -d } else { d })
}

/// Signed distances from `points` to a watertight mesh.
pub fn compute_mesh_sdf(mesh: &TriangleMesh, points: &[Point3]) -> Result<Vec<f64>> {
    if let Watertightness::Violations(edges) = watertight_check(mesh) {
        let (a, b) = edges[0];
        return Err(Error::NotWatertight(a, b));
    }
    if mesh.is_empty() {
        return Err(Error::InvalidArgument("mesh has no triangles".into()));
    }
    points
        .par_iter()
        .map(|p| signed_distance(mesh, p))
        .collect()
}

/// A [`ShapeField`] backed by a validated watertight mesh.
pub struct MeshField {
    mesh: TriangleMesh,
    radius: f64,
}

impl MeshField {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        if let Watertightness::Violations(edges) = watertight_check(&mesh) {
            let (a, b) = edges[0];
            return Err(Error::NotWatertight(a, b));
        }
        if mesh.is_empty() {
            return Err(Error::InvalidArgument("mesh has no triangles".into()));
        }
        let radius = mesh.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok(Self { mesh, radius })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }
}

impl ShapeField for MeshField {
    /// Falls back to the unsigned distance if every ray direction grazes an
    /// edge; callers needing a hard error use [`compute_mesh_sdf`].
    fn eval(&self, p: &Point3) -> f64 {
        let d = unsigned_distance(&self.mesh, p);
        match is_inside(&self.mesh, p) {
            Ok(true) => -d,
            _ => d,
        }
    }

    fn bounding_radius(&self) -> f64 {
        self.radius
    }

    fn eval_batch(&self, points: &[Point3], out: &mut [f64]) {
        out.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(o, p)| *o = self.eval(p));
    }

    /// Area-weighted uniform sampling of the triangles.
    fn sample_surface(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<Point3> {
        let mut cdf = Vec::with_capacity(self.mesh.triangles.len());
        let mut total = 0.0;
        for t in 0..self.mesh.triangles.len() {
            total += self.mesh.area(t);
            cdf.push(total);
        }
        (0..n)
            .map(|_| {
                let x = rng.random::<f64>() * total;
                let t = cdf.partition_point(|&c| c < x).min(cdf.len() - 1);
                let [a, b, c] = self.mesh.triangle(t);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn icosphere_centre_distance() {
        let s = TriangleMesh::icosphere(0.5, 3);
        let d = compute_mesh_sdf(&s, &[Point3::zeros()]).unwrap();
        assert!((d[0] + 0.5).abs() < 0.02 * 0.5, "{}", d[0]);
    }

    #[test]
    fn vertex_is_on_surface() {
        let s = TriangleMesh::icosphere(0.5, 2);
        let d = compute_mesh_sdf(&s, &[s.vertices[7]]).unwrap();
        assert!(d[0].abs() < 1e-9);
    }

    #[test]
    fn open_mesh_is_rejected_with_edge() {
        let mut s = TriangleMesh::icosphere(0.5, 1);
        s.triangles.remove(0);
        assert!(matches!(
            compute_mesh_sdf(&s, &[Point3::zeros()]),
            Err(Error::NotWatertight(_, _))
        ));
    }

    #[test]
    fn sign_agrees_with_analytic_sphere() {
        let r = 0.6;
        let s = TriangleMesh::icosphere(r, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Point3> = (0..10_000)
            .map(|_| crate::geometry::field::uniform_in_cube(&mut rng, 1.0))
            .collect();
        let d = compute_mesh_sdf(&s, &pts).unwrap();
        let agree = pts
            .iter()
            .zip(&d)
            .filter(|(p, d)| (p.norm() - r).signum() == d.signum())
            .count();
        assert!(agree as f64 >= 0.999 * pts.len() as f64, "agree = {agree}");
    }

    #[test]
    fn closest_point_regions() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let q = |x, y, z| closest_point_on_triangle(&Point3::new(x, y, z), &a, &b, &c);
        assert_eq!(q(-1.0, -1.0, 0.0), a);
        assert_eq!(q(2.0, -0.5, 0.0), b);
        assert!((q(0.2, 0.2, 3.0) - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert!((q(1.0, 1.0, 0.0) - Point3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mesh_field_surface_samples_lie_on_triangles() {
        let s = TriangleMesh::icosphere(0.5, 2);
        let f = MeshField::new(s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in f.sample_surface(50, &mut rng) {
            assert!(f.eval(&p).abs() < 1e-9);
        }
    }
}
