//! Indexed triangle meshes, OBJ I/O, normalization and watertightness checks.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Point3;
use crate::error::{invalid, Error, Result};

/// Shapes are scaled so the farthest vertex sits at this radius.
pub const NORMALIZED_RADIUS: f64 = 0.9;

/// Triangles smaller than this area are dropped after extraction.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle surface. Triangles wind counterclockwise seen from outside.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

/// Report returned by [`watertight_check`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Watertightness {
    Ok,
    /// Undirected edges `(lo, hi)` that are not shared by exactly two
    /// oppositely oriented triangles.
    Violations(Vec<(usize, usize)>),
}

impl Watertightness {
    pub fn is_ok(&self) -> bool {
        matches!(self, Watertightness::Ok)
    }
}

/// Uniform scale and offset mapping a mesh into the unit sphere:
/// `normalized = (v + offset) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizeTransform {
    pub scale: f64,
    pub offset: Point3,
}

impl NormalizeTransform {
    pub fn apply(&self, v: &Point3) -> Point3 {
        (v + self.offset) * self.scale
    }

    pub fn invert(&self, v: &Point3) -> Point3 {
        v / self.scale - self.offset
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(invalid(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(invalid("non-finite vertex coordinate"));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal `(b - a) x (c - a)`; its length is twice the area.
    pub fn face_normal(&self, t: usize) -> Point3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.face_normal(t).norm()
    }

    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].dot(&self.vertices[b].cross(&self.vertices[c])) / 6.0
            })
            .sum()
    }

    pub fn map_vertices(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_vertices(|v| v * s)
    }

    pub fn translated(&self, t: Point3) -> Self {
        self.map_vertices(|v| v + t)
    }

    /// Reflect through the `z = 0` plane, reversing winding so faces stay
    /// outward. The first vertex of each triangle is kept in place.
    pub fn mirrored_z(&self) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point3::new(v.x, v.y, -v.z))
                .collect(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Drop triangles with repeated indices or area below [`DEGENERATE_AREA`].
    pub fn remove_degenerate(&mut self) {
        let verts = &self.vertices;
        self.triangles.retain(|&[a, b, c]| {
            a != b
                && b != c
                && a != c
                && 0.5 * (verts[b] - verts[a]).cross(&(verts[c] - verts[a])).norm()
                    > DEGENERATE_AREA
        });
    }

    /// Drop vertices not referenced by any triangle, reindexing the rest.
    pub fn compact(&mut self) {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                if remap[*i] == usize::MAX {
                    remap[*i] = vertices.len();
                    vertices.push(self.vertices[*i]);
                }
                *i = remap[*i];
            }
        }
        self.vertices = vertices;
    }

    /// Icosahedron subdivided `levels` times and projected onto a sphere.
    pub fn icosphere(radius: f64, levels: usize) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Point3> = [
            (-1.0, phi, 0.0),
            (1.0, phi, 0.0),
            (-1.0, -phi, 0.0),
            (1.0, -phi, 0.0),
            (0.0, -1.0, phi),
            (0.0, 1.0, phi),
            (0.0, -1.0, -phi),
            (0.0, 1.0, -phi),
            (phi, 0.0, -1.0),
            (phi, 0.0, 1.0),
            (-phi, 0.0, -1.0),
            (-phi, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Point3::new(x, y, z).normalize())
        .collect();
        let mut triangles: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
            let mut mid = |a: usize, b: usize, vs: &mut Vec<Point3>| -> usize {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    vs.push(((vs[a] + vs[b]) * 0.5).normalize());
                    vs.len() - 1
                })
            };
            let mut next = Vec::with_capacity(triangles.len() * 4);
            for &[a, b, c] in &triangles {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            triangles = next;
        }
        for v in &mut vertices {
            *v *= radius;
        }
        Self {
            vertices,
            triangles,
        }
    }

    /// Axis-aligned box mesh with outward winding.
    pub fn cuboid(min: Point3, max: Point3) -> Self {
        let c = |i: usize| {
            Point3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        };
        let vertices = (0..8).map(c).collect();
        let quads = [
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self {
            vertices,
            triangles,
        }
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }

    pub fn to_obj_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_obj(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("OBJ output is ASCII")
    }

    /// Parse ASCII OBJ `v`/`f` records; other records are ignored.
    /// Faces must be triangles; `a/b/c` index forms are accepted.
    pub fn read_obj<R: BufRead>(r: R) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
                    if coords.len() != 3 {
                        return Err(Error::Format(format!(
                            "line {}: vertex needs 3 coordinates",
                            lineno + 1
                        )));
                    }
                    vertices.push(Point3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|s| {
                            s.split('/')
                                .next()
                                .unwrap_or("")
                                .parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| {
                                    Error::Format(format!(
                                        "line {}: bad face index {s:?}",
                                        lineno + 1
                                    ))
                                })
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(Error::Format(format!(
                            "line {}: only triangular faces are supported",
                            lineno + 1
                        )));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }
}

/// Check that every undirected edge is used by exactly two triangles with
/// opposite orientation.
pub fn watertight_check(mesh: &TriangleMesh) -> Watertightness {
    // value: (count of a->b with a < b, count of b->a)
    let mut edges: BTreeMap<(usize, usize), (u32, u32)> = BTreeMap::new();
    for &[a, b, c] in &mesh.triangles {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            let e = edges.entry((u.min(v), u.max(v))).or_default();
            if u < v {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    let bad: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|(_, counts)| *counts != (1, 1))
        .map(|(e, _)| e)
        .collect();
    if bad.is_empty() {
        Watertightness::Ok
    } else {
        Watertightness::Violations(bad)
    }
}

/// Centre the bounding box at the origin and scale so the farthest vertex
/// lies at [`NORMALIZED_RADIUS`].
pub fn normalize_to_unit_sphere(mesh: &TriangleMesh) -> Result<(TriangleMesh, NormalizeTransform)> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| invalid("cannot normalize an empty mesh"))?;
    let offset = -(lo + hi) * 0.5;
    let max_r = mesh
        .vertices
        .iter()
        .map(|v| (v + offset).norm())
        .fold(0.0, f64::max);
    if max_r <= 0.0 {
        return Err(invalid("mesh collapses to a single point"));
    }
    let tf = NormalizeTransform {
        scale: NORMALIZED_RADIUS / max_r,
        offset,
    };
    Ok((mesh.map_vertices(|v| tf.apply(v)), tf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn closed_tetrahedron_is_watertight() {
        let t = tetrahedron();
        assert!(watertight_check(&t).is_ok());
        assert!(t.volume() > 0.0);
    }

    #[test]
    fn open_tetrahedron_reports_three_edges() {
        let mut t = tetrahedron();
        t.triangles.pop();
        match watertight_check(&t) {
            Watertightness::Violations(v) => assert_eq!(v, vec![(1, 2), (1, 3), (2, 3)]),
            Watertightness::Ok => panic!("open mesh passed"),
        }
    }

    #[test]
    fn flipped_face_is_a_violation() {
        let mut t = tetrahedron();
        t.triangles[3] = [1, 3, 2];
        assert!(!watertight_check(&t).is_ok());
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let s = TriangleMesh::icosphere(0.5, 3);
        assert!(watertight_check(&s).is_ok());
        for t in 0..s.triangles.len() {
            let [a, b, c] = s.triangle(t);
            assert!(s.face_normal(t).dot(&(a + b + c)) > 0.0);
        }
        let vol = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((s.volume() - vol).abs() / vol < 0.02);
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let b = TriangleMesh::cuboid(Point3::new(-1.0, -0.5, -0.25), Point3::new(1.0, 0.5, 0.25));
        assert!(watertight_check(&b).is_ok());
        assert!((b.volume() - 1.0).abs() < 1e-12);
        assert!(watertight_check(&b.mirrored_z()).is_ok());
        assert!((b.mirrored_z().volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_of_offset_sphere() {
        let s = TriangleMesh::icosphere(10.0, 2).translated(Point3::new(5.0, 0.0, 0.0));
        let (n, tf) = normalize_to_unit_sphere(&s).unwrap();
        assert!((tf.offset - Point3::new(-5.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((tf.scale - NORMALIZED_RADIUS / 10.0).abs() < 1e-12);
        for (v, orig) in n.vertices.iter().zip(&s.vertices) {
            assert!(v.norm() <= NORMALIZED_RADIUS + 1e-9);
            assert!((tf.invert(v) - orig).norm() < 1e-9);
        }
    }

    #[test]
    fn inscribed_mesh_normalizes_to_identity() {
        let s = TriangleMesh::icosphere(NORMALIZED_RADIUS, 1);
        let (_, tf) = normalize_to_unit_sphere(&s).unwrap();
        assert_eq!(tf.offset, Point3::zeros());
        assert!((tf.scale - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mesh_cannot_be_normalized() {
        assert!(normalize_to_unit_sphere(&TriangleMesh::default()).is_err());
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let s = TriangleMesh::icosphere(0.3, 1).translated(Point3::new(0.1, -0.2, 1.0 / 3.0));
        let text = s.to_obj_string();
        let back = TriangleMesh::read_obj(text.as_bytes()).unwrap();
        assert_eq!(back, s);
        let min_index = text
            .lines()
            .filter_map(|l| l.strip_prefix("f "))
            .flat_map(|l| l.split(' ').map(|i| i.parse::<usize>().unwrap()))
            .min();
        assert_eq!(min_index, Some(1));
    }

    #[test]
    fn obj_rejects_quads_and_bad_indices() {
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(TriangleMesh::read_obj(quad.as_bytes()).is_err());
        let oob = "v 0 0 0\nf 1 2 3\n";
        assert!(TriangleMesh::read_obj(oob.as_bytes()).is_err());
        let slashes = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n";
        assert_eq!(
            TriangleMesh::read_obj(slashes.as_bytes())
                .unwrap()
                .triangles,
            vec![[0, 1, 2]]
        );
    }
}
