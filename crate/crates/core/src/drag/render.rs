//! Orthographic normal and depth rendering.

use std::fmt;
use std::str::FromStr;

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, TriangleMesh};

/// Depth value of pixels no triangle covers.
pub const DEPTH_BACKGROUND: f64 = 2.0;
/// Per-view resolution used for atlases and drag features.
pub const DEFAULT_RESOLUTION: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Top,
    Bottom,
    Left,
    Right,
    Front,
    Back,
    /// Alias of [`View::Left`].
    Side,
}

impl View {
    /// Atlas tile order, row-major.
    pub const ATLAS: [View; 6] = [
        View::Top,
        View::Bottom,
        View::Left,
        View::Right,
        View::Front,
        View::Back,
    ];

    /// `(right, up, toward_camera)`; `right x up = toward_camera`.
    pub fn basis(self) -> (Point3, Point3, Point3) {
        let v = Point3::new;
        match self {
            View::Front => (v(0.0, 0.0, 1.0), v(0.0, 1.0, 0.0), v(-1.0, 0.0, 0.0)),
            View::Back => (v(0.0, 0.0, -1.0), v(0.0, 1.0, 0.0), v(1.0, 0.0, 0.0)),
            View::Left | View::Side => (v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0)),
            View::Right => (v(-1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, -1.0)),
            View::Top => (v(0.0, 0.0, -1.0), v(-1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)),
            View::Bottom => (v(0.0, 0.0, 1.0), v(-1.0, 0.0, 0.0), v(0.0, -1.0, 0.0)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Top => "top",
            View::Bottom => "bottom",
            View::Left => "left",
            View::Right => "right",
            View::Front => "front",
            View::Back => "back",
            View::Side => "side",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "top" => View::Top,
            "bottom" => View::Bottom,
            "left" => View::Left,
            "right" => View::Right,
            "front" => View::Front,
            "back" => View::Back,
            "side" => View::Side,
            _ => return Err(invalid(format!("unknown view {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Unit normal in camera coordinates `(right, up, toward_camera)`.
    Normal,
    /// `1 - toward_camera . p`, so nearer surfaces have smaller depth.
    Depth,
}

/// Row-major image, row 0 at the top. Normal images store three values per
/// pixel with `(0, 0, 0)` as background; depth images store one with
/// [`DEPTH_BACKGROUND`].
#[derive(Clone, Debug, PartialEq)]
pub struct ViewImage {
    pub view: View,
    pub channel: Channel,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ViewImage {
    pub fn channels(&self) -> usize {
        match self.channel {
            Channel::Normal => 3,
            Channel::Depth => 1,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let c = self.channels();
        let i = (row * self.width + col) * c;
        &self.data[i..i + c]
    }

    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        let p = self.pixel(row, col);
        match self.channel {
            Channel::Normal => p.iter().any(|&v| v != 0.0),
            Channel::Depth => p[0] < DEPTH_BACKGROUND,
        }
    }

    pub fn foreground_count(&self) -> usize {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_foreground(r, c))
            .count()
    }

    /// Inclusive `(row_min, row_max, col_min, col_max)` of the silhouette.
    pub fn silhouette_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.is_foreground(r, c) {
                    b = Some(match b {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
            }
        }
        b
    }

    /// 8-bit RGB: normals map `[-1, 1]` to `[0, 255]`, background is black;
    /// depth maps `[0, 2]` to `[255, 0]`.
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let (r, c) = (y as usize, x as usize);
            let p = self.pixel(r, c);
            match self.channel {
                Channel::Normal if self.is_foreground(r, c) => {
                    image::Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
                }
                Channel::Normal => image::Rgb([0, 0, 0]),
                Channel::Depth => {
                    let g = ((1.0 - p[0] / DEPTH_BACKGROUND).clamp(0.0, 1.0) * 255.0).round() as u8;
                    image::Rgb([g, g, g])
                }
            }
        })
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.to_rgb())
    }
}

fn quantize(n: f64) -> u8 {
    (((n + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Projected triangle ready for rasterization.
struct Projected {
    uv: [[f64; 2]; 3],
    depth: [f64; 3],
    normal: [f64; 3],
}

/// Rasterize `mesh` from `view` over the square `[-1, 1]^2`. Each pixel
/// center takes the nearest covering triangle; ties keep the earlier
/// triangle. Vertices are visited in index order so that mirrored meshes
/// render to exactly mirrored images.
pub fn render_view(
    mesh: &TriangleMesh,
    view: View,
    resolution: usize,
    channel: Channel,
) -> Result<ViewImage> {
    if resolution == 0 {
        return Err(invalid("resolution must be positive"));
    }
    let (right, up, back) = view.basis();
    let tris: Vec<Projected> = (0..mesh.triangles.len())
        .filter_map(|t| {
            let n = mesh.face_normal(t);
            let len = n.norm();
            if !(len > 0.0) {
                return None;
            }
            let mut idx = mesh.triangles[t];
            idx.sort_unstable();
            let p = idx.map(|i| mesh.vertices[i]);
            Some(Projected {
                uv: p.map(|v| [right.dot(&v), up.dot(&v)]),
                depth: p.map(|v| 1.0 - back.dot(&v)),
                normal: [right.dot(&n) / len, up.dot(&n) / len, back.dot(&n) / len],
            })
        })
        .collect();

    let w = resolution;
    let rows: Vec<Vec<(f64, Option<usize>)>> = (0..w)
        .into_par_iter()
        .map(|r| {
            let v = (w as f64 - 1.0 - 2.0 * r as f64) / w as f64;
            let mut row = vec![(f64::INFINITY, None); w];
            for (t, tri) in tris.iter().enumerate() {
                let vmin = tri.uv.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
                let vmax = tri
                    .uv
                    .iter()
                    .map(|p| p[1])
                    .fold(f64::NEG_INFINITY, f64::max);
                if v < vmin || v > vmax {
                    continue;
                }
                let umin = tri.uv.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
                let umax = tri
                    .uv
                    .iter()
                    .map(|p| p[0])
                    .fold(f64::NEG_INFINITY, f64::max);
                let c0 = (((umin * w as f64 + w as f64 - 1.0) / 2.0).floor().max(0.0)) as usize;
                let c1 = ((umax * w as f64 + w as f64 - 1.0) / 2.0)
                    .ceil()
                    .min(w as f64 - 1.0);
                if c1 < 0.0 {
                    continue;
                }
                for (c, px) in row.iter_mut().enumerate().take(c1 as usize + 1).skip(c0) {
                    let u = (2.0 * c as f64 + 1.0 - w as f64) / w as f64;
                    if let Some(d) = cover(tri, u, v) {
                        if d < px.0 {
                            *px = (d, Some(t));
                        }
                    }
                }
            }
            row
        })
        .collect();

    let channels = if channel == Channel::Normal { 3 } else { 1 };
    let mut data = Vec::with_capacity(w * w * channels);
    for (d, t) in rows.into_iter().flatten() {
        match (channel, t) {
            (Channel::Normal, Some(t)) => data.extend_from_slice(&tris[t].normal),
            (Channel::Normal, None) => data.extend_from_slice(&[0.0; 3]),
            (Channel::Depth, Some(_)) => data.push(d),
            (Channel::Depth, None) => data.push(DEPTH_BACKGROUND),
        }
    }
    Ok(ViewImage {
        view,
        channel,
        width: w,
        height: w,
        data,
    })
}

/// Interpolated depth if `(u, v)` lies inside or on the triangle, either winding.
fn cover(tri: &Projected, u: f64, v: f64) -> Option<f64> {
    let [a, b, c] = tri.uv;
    let edge = |p: [f64; 2], q: [f64; 2]| (q[0] - p[0]) * (v - p[1]) - (q[1] - p[1]) * (u - p[0]);
    let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if area == 0.0 {
        return None;
    }
    let w0 = edge(b, c) / area;
    let w1 = edge(c, a) / area;
    let w2 = edge(a, b) / area;
    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
        return None;
    }
    Some(w0 * tri.depth[0] + w1 * tri.depth[1] + w2 * tri.depth[2])
}

/// The six normal views, tiled 3x2 as top, bottom, left / right, front, back.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalAtlas {
    pub tile: usize,
    /// In [`View::ATLAS`] order.
    pub views: Vec<ViewImage>,
}

impl NormalAtlas {
    pub fn view(&self, view: View) -> &ViewImage {
        let view = if view == View::Side { View::Left } else { view };
        let i = View::ATLAS
            .iter()
            .position(|&v| v == view)
            .expect("atlas views");
        &self.views[i]
    }

    pub fn composite(&self) -> RgbImage {
        let t = self.tile as u32;
        let mut img = RgbImage::new(3 * t, 2 * t);
        for (i, v) in self.views.iter().enumerate() {
            let tile = v.to_rgb();
            let (ox, oy) = ((i as u32 % 3) * t, (i as u32 / 3) * t);
            for (x, y, p) in tile.enumerate_pixels() {
                img.put_pixel(ox + x, oy + y, *p);
            }
        }
        img
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.composite())
    }
}

pub fn build_atlas(mesh: &TriangleMesh, resolution: usize) -> Result<NormalAtlas> {
    let views = View::ATLAS
        .iter()
        .map(|&v| render_view(mesh, v, resolution, Channel::Normal))
        .collect::<Result<_>>()?;
    Ok(NormalAtlas {
        tile: resolution,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bases_are_right_handed() {
        for v in View::ATLAS {
            let (r, u, b) = v.basis();
            assert_eq!(r.cross(&u), b, "{v}");
        }
    }

    #[test]
    fn sphere_front_center_faces_camera() {
        let m = TriangleMesh::icosphere(0.8, 4);
        let img = render_view(&m, View::Front, 64, Channel::Normal).unwrap();
        let n = img.pixel(32, 32);
        assert!(
            (n[2] - 1.0).abs() < 0.02 && n[0].abs() < 0.1 && n[1].abs() < 0.1,
            "{n:?}"
        );
        let d = render_view(&m, View::Front, 64, Channel::Depth).unwrap();
        assert!((d.pixel(32, 32)[0] - 0.2).abs() < 0.02);
        assert_eq!(d.pixel(0, 0)[0], DEPTH_BACKGROUND);
    }

    #[test]
    fn foreground_normals_are_unit() {
        let m = TriangleMesh::icosphere(0.7, 2);
        for v in View::ATLAS {
            let img = render_view(&m, v, 48, Channel::Normal).unwrap();
            for r in 0..48 {
                for c in 0..48 {
                    if img.is_foreground(r, c) {
                        let p = img.pixel(r, c);
                        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                        assert!((n - 1.0).abs() < 1e-3);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_mesh_is_background() {
        let m = TriangleMesh::default();
        let img = render_view(&m, View::Top, 16, Channel::Depth).unwrap();
        assert!(img.data.iter().all(|&d| d == DEPTH_BACKGROUND));
        assert_eq!(img.foreground_count(), 0);
        assert!(img.silhouette_bounds().is_none());
    }

    #[test]
    fn top_view_orientation() {
        // A box stretched along x shows its front (small x) at the top of the top view.
        let m = TriangleMesh::cuboid(Point3::new(-0.8, -0.1, -0.2), Point3::new(0.0, 0.1, 0.2));
        let img = render_view(&m, View::Top, 32, Channel::Normal).unwrap();
        let (r0, r1, _, _) = img.silhouette_bounds().unwrap();
        assert!(r0 < 4 && r1 < 17, "{r0} {r1}");
        // The left view puts +x on the right.
        let side = render_view(&m, View::Left, 32, Channel::Normal).unwrap();
        let (_, _, c0, c1) = side.silhouette_bounds().unwrap();
        assert!(c0 < 4 && c1 < 17);
    }

    #[test]
    fn mirrored_mesh_swaps_side_views() {
        let m = TriangleMesh::cuboid(Point3::new(-0.5, -0.2, -0.1), Point3::new(0.6, 0.3, 0.4));
        let m = m.map_vertices(|v| Point3::new(v.x + 0.1 * v.z, v.y, v.z));
        let left = render_view(&m.mirrored_z(), View::Left, 40, Channel::Normal).unwrap();
        let right = render_view(&m, View::Right, 40, Channel::Normal).unwrap();
        for r in 0..40 {
            for c in 0..40 {
                let a = left.pixel(r, c);
                let b = right.pixel(r, 39 - c);
                assert_eq!([a[0], a[1], a[2]], [-b[0], b[1], b[2]], "({r}, {c})");
            }
        }
    }

    #[test]
    fn atlas_layout_and_determinism() {
        let m = TriangleMesh::icosphere(0.9, 3);
        let a = build_atlas(&m, 32).unwrap();
        let img = a.composite();
        assert_eq!(img.dimensions(), (96, 64));
        assert_eq!(
            a.to_png().unwrap(),
            build_atlas(&m, 32).unwrap().to_png().unwrap()
        );
        let areas: Vec<usize> = a.views.iter().map(ViewImage::foreground_count).collect();
        let mean = areas.iter().sum::<usize>() as f64 / 6.0;
        for &x in &areas {
            assert!((x as f64 - mean).abs() / mean < 0.01, "{areas:?}");
        }
    }

    #[test]
    fn view_names_round_trip() {
        for v in View::ATLAS.iter().chain([&View::Side]) {
            assert_eq!(v.name().parse::<View>().unwrap(), *v);
        }
        assert!("diagonal".parse::<View>().is_err());
    }
}
