//! Isosurface extraction on a regular lattice.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::field::ShapeField;
use super::mc_tables::{CORNERS, EDGES, TRI_TABLE};
use super::mesh::TriangleMesh;
use super::Point3;
use crate::error::{invalid, Result};

/// Evaluation lattice: `resolution` points per axis spanning `[-half_extent, half_extent]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub half_extent: f64,
}

impl GridSpec {
    pub fn new(resolution: usize, half_extent: f64) -> Result<Self> {
        let g = Self {
            resolution,
            half_extent,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(invalid(format!(
                "grid resolution must be at least 8, got {}",
                self.resolution
            )));
        }
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(invalid("grid half extent must be positive"));
        }
        Ok(())
    }

    /// Cell size `h = 2b / (N - 1)`.
    pub fn cell_size(&self) -> f64 {
        2.0 * self.half_extent / (self.resolution - 1) as f64
    }

    /// Lattice coordinate of index `i`. Symmetric about zero bit-for-bit:
    /// `coord(i) == -coord(N - 1 - i)`.
    pub fn coord(&self, i: usize) -> f64 {
        let n1 = (self.resolution - 1) as f64;
        (2.0 * i as f64 - n1) / n1 * self.half_extent
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(self.coord(i), self.coord(j), self.coord(k))
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }
}

/// How lattice values are obtained from a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    /// Evaluate every lattice point.
    Dense,
    /// Evaluate a coarse lattice with stride `stride`, then evaluate fine
    /// points only inside coarse cells that contain a sign change or whose
    /// corners all lie within `margin` coarse cell diagonals of zero. For a
    /// distance field a corner farther than one diagonal rules out any
    /// surface in the cell, so `margin = 1` loses nothing there. Skipped
    /// points take the trilinear interpolant of the coarse corners, which
    /// never changes sign inside a skipped cell.
    NarrowBand { stride: usize, margin: f64 },
}

impl Sampling {
    pub const DEFAULT_NARROW_BAND: Sampling = Sampling::NarrowBand {
        stride: 4,
        margin: 1.0,
    };
}

/// Output of [`marching_cubes`].
#[derive(Clone, Debug, Default)]
pub struct Isosurface {
    pub mesh: TriangleMesh,
    /// The inside region reaches the lattice boundary, so the mesh is open there.
    pub touches_boundary: bool,
    /// Number of field evaluations performed.
    pub evaluations: usize,
}

/// Lattice values for a field.
pub fn sample_grid(
    field: &dyn ShapeField,
    grid: &GridSpec,
    sampling: Sampling,
) -> (Vec<f64>, usize) {
    let n = grid.resolution;
    match sampling {
        Sampling::NarrowBand { stride, margin } if stride >= 2 && n > stride => {
            narrow_band(field, grid, stride, margin)
        }
        _ => {
            let mut points = Vec::with_capacity(n * n * n);
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        points.push(grid.point(i, j, k));
                    }
                }
            }
            let mut values = vec![0.0; points.len()];
            field.eval_batch(&points, &mut values);
            (values, points.len())
        }
    }
}

fn narrow_band(
    field: &dyn ShapeField,
    grid: &GridSpec,
    stride: usize,
    margin: f64,
) -> (Vec<f64>, usize) {
    let n = grid.resolution;
    // Coarse lattice lines; the last coarse cell is shorter when `stride`
    // does not divide `n - 1`.
    let mut lines: Vec<usize> = (0..n).step_by(stride).collect();
    if *lines.last().expect("n > 0") != n - 1 {
        lines.push(n - 1);
    }
    let nc = lines.len();
    let mut coarse_pts = Vec::with_capacity(nc * nc * nc);
    for &k in &lines {
        for &j in &lines {
            for &i in &lines {
                coarse_pts.push(grid.point(i, j, k));
            }
        }
    }
    let mut coarse = vec![0.0; coarse_pts.len()];
    field.eval_batch(&coarse_pts, &mut coarse);
    let cidx = |i: usize, j: usize, k: usize| i + nc * (j + nc * k);

    let threshold = margin * grid.cell_size() * stride as f64 * 3f64.sqrt();
    let mut values = vec![f64::NAN; n * n * n];
    let mut pending: Vec<usize> = Vec::new();
    let mut queued = vec![false; n * n * n];

    for ck in 0..nc - 1 {
        for cj in 0..nc - 1 {
            for ci in 0..nc - 1 {
                let corner = |c: usize| {
                    let [dx, dy, dz] = CORNERS[c];
                    coarse[cidx(ci + dx, cj + dy, ck + dz)]
                };
                let vals: [f64; 8] = std::array::from_fn(corner);
                let any_in = vals.iter().any(|&v| v < 0.0);
                let any_out = vals.iter().any(|&v| v >= 0.0);
                let near = vals.iter().all(|v| v.abs() < threshold);
                let refine = (any_in && any_out) || near;
                let (i0, j0, k0) = (lines[ci], lines[cj], lines[ck]);
                let (si, sj, sk) = (lines[ci + 1] - i0, lines[cj + 1] - j0, lines[ck + 1] - k0);
                for dk in 0..=sk {
                    for dj in 0..=sj {
                        for di in 0..=si {
                            let idx = grid.index(i0 + di, j0 + dj, k0 + dk);
                            if refine {
                                if !queued[idx] {
                                    queued[idx] = true;
                                    pending.push(idx);
                                }
                            } else if values[idx].is_nan() {
                                let (fx, fy, fz) = (
                                    di as f64 / si as f64,
                                    dj as f64 / sj as f64,
                                    dk as f64 / sk as f64,
                                );
                                values[idx] = trilinear(&vals, fx, fy, fz);
                            }
                        }
                    }
                }
            }
        }
    }

    pending.sort_unstable();
    let pts: Vec<Point3> = pending
        .iter()
        .map(|&idx| {
            let i = idx % n;
            let j = (idx / n) % n;
            let k = idx / (n * n);
            grid.point(i, j, k)
        })
        .collect();
    let mut fine = vec![0.0; pts.len()];
    field.eval_batch(&pts, &mut fine);
    for (&idx, v) in pending.iter().zip(fine) {
        values[idx] = v;
    }
    (values, coarse_pts.len() + pts.len())
}

fn trilinear(v: &[f64; 8], fx: f64, fy: f64, fz: f64) -> f64 {
    // corner order follows CORNERS
    let x00 = v[0] + (v[1] - v[0]) * fx;
    let x10 = v[3] + (v[2] - v[3]) * fx;
    let x01 = v[4] + (v[5] - v[4]) * fx;
    let x11 = v[7] + (v[6] - v[7]) * fx;
    let y0 = x00 + (x10 - x00) * fy;
    let y1 = x01 + (x11 - x01) * fy;
    y0 + (y1 - y0) * fz
}

/// Extract the zero level set of `field` on `grid` with dense sampling.
pub fn marching_cubes(field: &dyn ShapeField, grid: &GridSpec) -> Result<Isosurface> {
    marching_cubes_with(field, grid, Sampling::Dense)
}

pub fn marching_cubes_with(
    field: &dyn ShapeField,
    grid: &GridSpec,
    sampling: Sampling,
) -> Result<Isosurface> {
    grid.validate()?;
    let (values, evaluations) = sample_grid(field, grid, sampling);
    let mut iso = polygonize(grid, &values);
    iso.evaluations = evaluations;
    Ok(iso)
}

/// Key of a mesh vertex: either on a lattice edge (interior crossing) or
/// exactly on a lattice point whose value is zero.
#[derive(Clone, Copy, Hash, PartialEq, Eq)]
enum VertexKey {
    Edge(usize, u8),
    Corner(usize),
}

/// Run the case table over precomputed lattice values. Points with value
/// `< 0` are inside.
pub fn polygonize(grid: &GridSpec, values: &[f64]) -> Isosurface {
    let n = grid.resolution;
    assert_eq!(values.len(), n * n * n, "lattice value count");

    let mut touches_boundary = false;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let on_face = i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1;
                if on_face && values[grid.index(i, j, k)] < 0.0 {
                    touches_boundary = true;
                }
            }
        }
    }

    let mut vertex_ids: HashMap<VertexKey, usize> = HashMap::new();
    let mut vertices: Vec<Point3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let corner_idx: [usize; 8] = std::array::from_fn(|c| {
                    let [dx, dy, dz] = CORNERS[c];
                    grid.index(i + dx, j + dy, k + dz)
                });
                let mut case = 0usize;
                for (c, &idx) in corner_idx.iter().enumerate() {
                    if values[idx] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut edge_vertex = [usize::MAX; 12];
                for t in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(t) {
                        let e = e as usize;
                        if edge_vertex[e] == usize::MAX {
                            edge_vertex[e] = edge_vertex_id(
                                grid,
                                values,
                                &corner_idx,
                                (i, j, k),
                                e,
                                &mut vertex_ids,
                                &mut vertices,
                            );
                        }
                        *slot = edge_vertex[e];
                    }
                    // The table winds triangles clockwise seen from outside
                    // in this corner layout; flip to counterclockwise.
                    triangles.push([tri[0], tri[2], tri[1]]);
                }
            }
        }
    }

    let mut mesh = TriangleMesh {
        vertices,
        triangles,
    };
    // Triangles collapsed onto a zero-valued lattice point are dropped. Thin
    // slivers with distinct vertices stay: removing them would open holes.
    mesh.triangles
        .retain(|&[a, b, c]| a != b && b != c && a != c);
    mesh.compact();
    Isosurface {
        mesh,
        touches_boundary,
        evaluations: 0,
    }
}

fn edge_vertex_id(
    grid: &GridSpec,
    values: &[f64],
    corner_idx: &[usize; 8],
    cell: (usize, usize, usize),
    edge: usize,
    ids: &mut HashMap<VertexKey, usize>,
    vertices: &mut Vec<Point3>,
) -> usize {
    let [c0, c1] = EDGES[edge];
    let (g0, g1) = (corner_idx[c0], corner_idx[c1]);
    let (v0, v1) = (values[g0], values[g1]);
    let corner_pos = |c: usize| {
        let [dx, dy, dz] = CORNERS[c];
        grid.point(cell.0 + dx, cell.1 + dy, cell.2 + dz)
    };

    // Normalize the edge direction so both neighbouring cells agree bit-for-bit.
    let (lo, hi, vlo, vhi, plo, phi) = if g0 < g1 {
        (g0, g1, v0, v1, corner_pos(c0), corner_pos(c1))
    } else {
        (g1, g0, v1, v0, corner_pos(c1), corner_pos(c0))
    };
    let key = if vlo == 0.0 {
        VertexKey::Corner(lo)
    } else if vhi == 0.0 {
        VertexKey::Corner(hi)
    } else {
        let axis = if hi - lo == 1 {
            0
        } else if hi - lo == grid.resolution {
            1
        } else {
            2
        };
        VertexKey::Edge(lo, axis)
    };
    *ids.entry(key).or_insert_with(|| {
        let p = match key {
            VertexKey::Corner(g) if g == lo => plo,
            VertexKey::Corner(_) => phi,
            VertexKey::Edge(..) => {
                let t = vlo / (vlo - vhi);
                plo + (phi - plo) * t
            }
        };
        vertices.push(p);
        vertices.len() - 1
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::watertight_check;
    use crate::geometry::{Primitive, Shape};

    struct Constant(f64);
    impl ShapeField for Constant {
        fn eval(&self, _: &Point3) -> f64 {
            self.0
        }
        fn bounding_radius(&self) -> f64 {
            1.0
        }
    }

    fn sphere(r: f64) -> Shape {
        Shape::primitive(Primitive::Sphere { radius: r }).unwrap()
    }

    #[test]
    fn grid_coordinates_are_symmetric() {
        let g = GridSpec::new(64, 0.6).unwrap();
        for i in 0..64 {
            assert_eq!(g.coord(i), -g.coord(63 - i));
        }
        assert_eq!(g.coord(0), -0.6);
        assert!((g.cell_size() - 1.2 / 63.0).abs() < 1e-15);
        assert!(GridSpec::new(7, 1.0).is_err());
        assert!(GridSpec::new(8, 0.0).is_err());
    }

    #[test]
    fn sphere_vertices_near_true_surface() {
        let g = GridSpec::new(64, 0.6).unwrap();
        let s = sphere(0.4);
        let iso = marching_cubes(&s, &g).unwrap();
        let h = g.cell_size();
        assert!(!iso.touches_boundary);
        assert!(!iso.mesh.is_empty());
        for v in &iso.mesh.vertices {
            assert!((v.norm() - 0.4).abs() < 2.0 * h);
            assert!(s.eval(v).abs() < h);
        }
        assert!(watertight_check(&iso.mesh).is_ok());
    }

    #[test]
    fn sphere_mesh_is_outward() {
        let g = GridSpec::new(32, 0.6).unwrap();
        let iso = marching_cubes(&sphere(0.4), &g).unwrap();
        assert!(iso.mesh.volume() > 0.0);
        let vol = 4.0 / 3.0 * std::f64::consts::PI * 0.064;
        assert!((iso.mesh.volume() - vol).abs() / vol < 0.03);
    }

    #[test]
    fn positive_field_gives_empty_mesh() {
        let g = GridSpec::new(16, 1.0).unwrap();
        let iso = marching_cubes(&Constant(1.0), &g).unwrap();
        assert!(iso.mesh.is_empty());
        assert!(!iso.touches_boundary);
    }

    #[test]
    fn boundary_contact_is_flagged() {
        let g = GridSpec::new(16, 0.5).unwrap();
        let iso = marching_cubes(&sphere(0.6), &g).unwrap();
        assert!(iso.touches_boundary);
    }

    #[test]
    fn exact_zero_lattice_values_stay_watertight() {
        // Radius equal to a lattice coordinate puts zeros exactly on grid points.
        let g = GridSpec::new(17, 1.0).unwrap();
        let iso = marching_cubes(&sphere(0.5), &g).unwrap();
        assert!(watertight_check(&iso.mesh).is_ok());
    }

    #[test]
    fn narrow_band_matches_dense() {
        let s = Shape::Union(vec![
            sphere(0.35).translated([0.2, 0.0, 0.0]),
            Shape::primitive(Primitive::Box {
                half: [0.5, 0.1, 0.2],
            })
            .unwrap(),
        ]);
        // 65 has whole coarse cells, 64 and 47 end in a partial one.
        for n in [65, 64, 47] {
            let g = GridSpec::new(n, 1.0).unwrap();
            let dense = marching_cubes(&s, &g).unwrap();
            let band = marching_cubes_with(&s, &g, Sampling::DEFAULT_NARROW_BAND).unwrap();
            assert_eq!(dense.mesh, band.mesh, "n = {n}");
            assert!(band.evaluations * 3 < dense.evaluations, "n = {n}");
        }
    }
}
