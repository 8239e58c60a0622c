//! Signed distance fields: analytic primitives, CSG composition and the
//! [`ShapeField`] trait every other module queries.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Point3;
use crate::error::{invalid, Result};

/// A queryable signed distance function. Negative inside, positive outside.
///
/// Implementations must be deterministic and safe for concurrent reads.
pub trait ShapeField: Send + Sync {
    fn eval(&self, p: &Point3) -> f64;

    /// Radius of a ball centred at the origin that contains the surface.
    fn bounding_radius(&self) -> f64;

    fn eval_batch(&self, points: &[Point3], out: &mut [f64]) {
        debug_assert_eq!(points.len(), out.len());
        for (p, o) in points.iter().zip(out.iter_mut()) {
            *o = self.eval(p);
        }
    }

    /// Draw `n` points on (or very near) the zero level set.
    ///
    /// The default projects uniform candidates onto the surface along the
    /// finite-difference gradient; mesh-backed fields sample triangles instead.
    fn sample_surface(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<Point3> {
        project_to_surface(self, n, rng)
    }
}

impl<F: ShapeField + ?Sized> ShapeField for Arc<F> {
    fn eval(&self, p: &Point3) -> f64 {
        (**self).eval(p)
    }
    fn bounding_radius(&self) -> f64 {
        (**self).bounding_radius()
    }
    fn eval_batch(&self, points: &[Point3], out: &mut [f64]) {
        (**self).eval_batch(points, out)
    }
    fn sample_surface(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<Point3> {
        (**self).sample_surface(n, rng)
    }
}

pub(crate) fn gradient<F: ShapeField + ?Sized>(field: &F, p: &Point3, eps: f64) -> Point3 {
    let mut g = Point3::zeros();
    for axis in 0..3 {
        let mut a = *p;
        let mut b = *p;
        a[axis] += eps;
        b[axis] -= eps;
        g[axis] = (field.eval(&a) - field.eval(&b)) / (2.0 * eps);
    }
    g
}

fn project_to_surface<F: ShapeField + ?Sized>(
    field: &F,
    n: usize,
    rng: &mut dyn rand::RngCore,
) -> Vec<Point3> {
    let r = field.bounding_radius();
    let eps = 1e-5 * r;
    let accept = 1e-4 * r;
    let coord = Uniform::new_inclusive(-r, r).expect("positive bounding radius");
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        assert!(
            attempts < 200 * n + 10_000,
            "surface projection failed to converge; field may be empty"
        );
        let mut p = Point3::new(coord.sample(rng), coord.sample(rng), coord.sample(rng));
        let mut ok = false;
        for _ in 0..16 {
            let d = field.eval(&p);
            if d.abs() < accept {
                ok = true;
                break;
            }
            let g = gradient(field, &p, eps);
            let gn2 = g.norm_squared();
            if gn2 < 1e-12 {
                break;
            }
            p -= g * (d / gn2);
        }
        if ok && p.norm() <= r {
            out.push(p);
        }
    }
    out
}

/// Analytic primitive kinds, each centred at the origin.
///
/// Cylinders are capped and aligned with the z axis, which is the wheel axle
/// direction in the vehicle frame (x forward-to-back, y up, z lateral).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Primitive {
    Sphere { radius: f64 },
    Box { half: [f64; 3] },
    RoundedBox { half: [f64; 3], radius: f64 },
    Cylinder { radius: f64, half_length: f64 },
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Primitive::Sphere { radius } => positive("radius", radius),
            Primitive::Box { half } => half.iter().try_for_each(|&h| positive("half extent", h)),
            Primitive::RoundedBox { half, radius } => {
                half.iter().try_for_each(|&h| positive("half extent", h))?;
                positive("rounding radius", radius)?;
                if half.iter().any(|&h| radius > h) {
                    return Err(invalid("rounding radius exceeds a half extent"));
                }
                Ok(())
            }
            Primitive::Cylinder {
                radius,
                half_length,
            } => {
                positive("radius", radius)?;
                positive("half length", half_length)
            }
        }
    }

    /// Signed distance at `p`. Exact for all kinds.
    pub fn distance(&self, p: &Point3) -> f64 {
        match *self {
            Primitive::Sphere { radius } => p.norm() - radius,
            Primitive::Box { half } => box_distance(p, half, 0.0),
            Primitive::RoundedBox { half, radius } => box_distance(p, half, radius),
            Primitive::Cylinder {
                radius,
                half_length,
            } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - half_length;
                let inside = dr.max(dz).min(0.0);
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                inside + outside
            }
        }
    }

    /// Axis-aligned half extents of the primitive.
    pub fn half_extents(&self) -> [f64; 3] {
        match *self {
            Primitive::Sphere { radius } => [radius; 3],
            Primitive::Box { half } | Primitive::RoundedBox { half, .. } => half,
            Primitive::Cylinder {
                radius,
                half_length,
            } => [radius, radius, half_length],
        }
    }
}

fn box_distance(p: &Point3, half: [f64; 3], round: f64) -> f64 {
    let q = [
        p.x.abs() - half[0] + round,
        p.y.abs() - half[1] + round,
        p.z.abs() - half[2] + round,
    ];
    let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2) + q[2].max(0.0).powi(2)).sqrt();
    let inside = q[0].max(q[1]).max(q[2]).min(0.0);
    outside + inside - round
}

/// Checked evaluation of a primitive at a point.
pub fn eval_primitive(kind: Primitive, p: &Point3) -> Result<f64> {
    kind.validate()?;
    Ok(kind.distance(p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CsgOp {
    Union,
    Intersection,
}

/// Analytic SDF expression tree.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Shape {
    Primitive(Primitive),
    Translate {
        offset: [f64; 3],
        inner: Box<Shape>,
    },
    /// Uniform scaling about the origin; distances scale with it.
    Scale {
        factor: f64,
        inner: Box<Shape>,
    },
    Union(Vec<Shape>),
    Intersection(Vec<Shape>),
}

impl Shape {
    pub fn primitive(p: Primitive) -> Result<Self> {
        p.validate()?;
        Ok(Shape::Primitive(p))
    }

    pub fn translated(self, offset: [f64; 3]) -> Self {
        Shape::Translate {
            offset,
            inner: Box::new(self),
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Shape::Scale {
            factor,
            inner: Box::new(self),
        }
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        match self {
            Shape::Primitive(prim) => prim.distance(p),
            Shape::Translate { offset, inner } => {
                inner.distance(&(p - Point3::new(offset[0], offset[1], offset[2])))
            }
            Shape::Scale { factor, inner } => inner.distance(&(p / *factor)) * factor,
            Shape::Union(parts) => parts
                .iter()
                .map(|s| s.distance(p))
                .fold(f64::INFINITY, f64::min),
            Shape::Intersection(parts) => parts
                .iter()
                .map(|s| s.distance(p))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Conservative axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        match self {
            Shape::Primitive(prim) => {
                let h = prim.half_extents();
                (
                    Point3::new(-h[0], -h[1], -h[2]),
                    Point3::new(h[0], h[1], h[2]),
                )
            }
            Shape::Translate { offset, inner } => {
                let o = Point3::new(offset[0], offset[1], offset[2]);
                let (lo, hi) = inner.bounds();
                (lo + o, hi + o)
            }
            Shape::Scale { factor, inner } => {
                let (lo, hi) = inner.bounds();
                (lo * *factor, hi * *factor)
            }
            Shape::Union(parts) => parts.iter().map(Shape::bounds).fold(
                (
                    Point3::repeat(f64::INFINITY),
                    Point3::repeat(f64::NEG_INFINITY),
                ),
                |(alo, ahi), (lo, hi)| (alo.inf(&lo), ahi.sup(&hi)),
            ),
            Shape::Intersection(parts) => parts.iter().map(Shape::bounds).fold(
                (
                    Point3::repeat(f64::NEG_INFINITY),
                    Point3::repeat(f64::INFINITY),
                ),
                |(alo, ahi), (lo, hi)| (alo.sup(&lo), ahi.inf(&hi)),
            ),
        }
    }
}

impl ShapeField for Shape {
    fn eval(&self, p: &Point3) -> f64 {
        self.distance(p)
    }

    fn bounding_radius(&self) -> f64 {
        let (lo, hi) = self.bounds();
        lo.abs().sup(&hi.abs()).norm()
    }
}

/// Pointwise min/max composition of two arbitrary fields.
pub struct Combined {
    pub op: CsgOp,
    pub a: Arc<dyn ShapeField>,
    pub b: Arc<dyn ShapeField>,
}

impl ShapeField for Combined {
    fn eval(&self, p: &Point3) -> f64 {
        let (a, b) = (self.a.eval(p), self.b.eval(p));
        match self.op {
            CsgOp::Union => a.min(b),
            CsgOp::Intersection => a.max(b),
        }
    }

    fn bounding_radius(&self) -> f64 {
        match self.op {
            CsgOp::Union => self.a.bounding_radius().max(self.b.bounding_radius()),
            CsgOp::Intersection => self.a.bounding_radius().min(self.b.bounding_radius()),
        }
    }
}

pub fn combine(op: CsgOp, a: Arc<dyn ShapeField>, b: Arc<dyn ShapeField>) -> Combined {
    Combined { op, a, b }
}

/// Random point inside the cube `[-half, half]^3`.
pub(crate) fn uniform_in_cube(rng: &mut impl Rng, half: f64) -> Point3 {
    let u = Uniform::new_inclusive(-half, half).expect("positive half width");
    Point3::new(u.sample(rng), u.sample(rng), u.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(r: f64) -> Shape {
        Shape::primitive(Primitive::Sphere { radius: r }).unwrap()
    }

    #[test]
    fn primitive_values() {
        let s = Primitive::Sphere { radius: 0.5 };
        assert_eq!(eval_primitive(s, &Point3::zeros()).unwrap(), -0.5);
        assert_eq!(eval_primitive(s, &Point3::new(1.0, 0.0, 0.0)).unwrap(), 0.5);
        let b = Primitive::Box {
            half: [0.3, 0.2, 0.2],
        };
        assert_eq!(eval_primitive(b, &Point3::new(0.3, 0.0, 0.0)).unwrap(), 0.0);
        let c = Primitive::Cylinder {
            radius: 0.2,
            half_length: 0.5,
        };
        assert!((c.distance(&Point3::new(0.0, 0.0, 0.7)) - 0.2).abs() < 1e-15);
        assert!((c.distance(&Point3::new(0.5, 0.0, 0.0)) - 0.3).abs() < 1e-15);
        assert!((c.distance(&Point3::zeros()) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_positive_dimensions_rejected() {
        assert!(eval_primitive(Primitive::Sphere { radius: 0.0 }, &Point3::zeros()).is_err());
        assert!(eval_primitive(
            Primitive::Box {
                half: [0.1, -0.2, 0.1]
            },
            &Point3::zeros()
        )
        .is_err());
        assert!(eval_primitive(
            Primitive::Cylinder {
                radius: 0.1,
                half_length: 0.0
            },
            &Point3::zeros()
        )
        .is_err());
    }

    #[test]
    fn csg_min_max() {
        let a: Arc<dyn ShapeField> = Arc::new(sphere(0.5));
        let b: Arc<dyn ShapeField> = Arc::new(sphere(0.3));
        let o = Point3::zeros();
        assert_eq!(combine(CsgOp::Union, a.clone(), b.clone()).eval(&o), -0.5);
        assert_eq!(combine(CsgOp::Intersection, a.clone(), b).eval(&o), -0.3);

        let u = combine(CsgOp::Union, a.clone(), a.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = uniform_in_cube(&mut rng, 1.0);
            assert_eq!(u.eval(&p), a.eval(&p));
        }
    }

    #[test]
    fn sign_convention_on_constructed_points() {
        let shapes = [
            Primitive::Sphere { radius: 0.4 },
            Primitive::Box {
                half: [0.3, 0.2, 0.1],
            },
            Primitive::RoundedBox {
                half: [0.3, 0.2, 0.1],
                radius: 0.05,
            },
            Primitive::Cylinder {
                radius: 0.2,
                half_length: 0.3,
            },
        ];
        for prim in shapes {
            let h = prim.half_extents();
            // Centre is inside, far point outside, face centre along x on the surface.
            assert!(prim.distance(&Point3::zeros()) < 0.0, "{prim:?}");
            assert!(prim.distance(&Point3::new(2.0, 2.0, 2.0)) > 0.0, "{prim:?}");
            assert!(
                prim.distance(&Point3::new(h[0], 0.0, 0.0)).abs() < 1e-15,
                "{prim:?}"
            );
            assert!(prim.distance(&Point3::new(0.5 * h[0], 0.0, 0.0)) < 0.0);
            assert!(prim.distance(&Point3::new(1.5 * h[0], 0.0, 0.0)) > 0.0);
        }
    }

    #[test]
    fn primitives_are_one_lipschitz() {
        let shapes = [
            Primitive::Sphere { radius: 0.4 },
            Primitive::Box {
                half: [0.3, 0.2, 0.1],
            },
            Primitive::RoundedBox {
                half: [0.3, 0.2, 0.1],
                radius: 0.05,
            },
            Primitive::Cylinder {
                radius: 0.2,
                half_length: 0.3,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for prim in shapes {
            for _ in 0..1000 {
                let p = uniform_in_cube(&mut rng, 1.0);
                let q = uniform_in_cube(&mut rng, 1.0);
                let lhs = (prim.distance(&p) - prim.distance(&q)).abs();
                assert!(lhs <= (p - q).norm() + 1e-12, "{prim:?}");
            }
        }
    }

    #[test]
    fn transforms_and_bounds() {
        let s = sphere(0.5).translated([1.0, 0.0, 0.0]).scaled(2.0);
        assert!((s.distance(&Point3::new(2.0, 0.0, 0.0)) + 1.0).abs() < 1e-15);
        assert!((s.distance(&Point3::new(3.0, 0.0, 0.0))).abs() < 1e-15);
        let (lo, hi) = s.bounds();
        assert_eq!(lo, Point3::new(1.0, -1.0, -1.0));
        assert_eq!(hi, Point3::new(3.0, 1.0, 1.0));
    }

    #[test]
    fn projection_lands_on_surface() {
        let s = sphere(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = s.sample_surface(200, &mut rng);
        assert_eq!(pts.len(), 200);
        for p in pts {
            assert!((p.norm() - 0.5).abs() < 1e-4);
        }
    }
}
