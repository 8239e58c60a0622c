//! Signed distance fields, sampling, triangle meshes and isosurface extraction.

pub mod field;
pub mod marching_cubes;
mod mc_tables;
pub mod mesh;
pub mod mesh_sdf;
pub mod sampling;

/// A point in model space: x runs front to back, y points up, z is lateral.
pub type Point3 = nalgebra::Vector3<f64>;

pub use field::{combine, eval_primitive, Combined, CsgOp, Primitive, Shape, ShapeField};
pub use marching_cubes::{marching_cubes, marching_cubes_with, GridSpec, Isosurface, Sampling};
pub use mesh::{
    normalize_to_unit_sphere, watertight_check, NormalizeTransform, TriangleMesh, Watertightness,
};
pub use mesh_sdf::{compute_mesh_sdf, MeshField};
pub use sampling::{sample_shape, SampleSet, SdfSample};
