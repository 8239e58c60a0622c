//! SDF supervision samples drawn around a shape's surface.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::field::{uniform_in_cube, ShapeField};
use super::Point3;
use crate::error::{invalid, Result};

/// Minimum number of samples accepted by [`sample_shape`].
pub const MIN_SAMPLES: usize = 100;
/// Fraction of samples jittered around the surface with the wide noise scale.
pub const NEAR_WIDE_FRACTION: f64 = 0.475;
/// Fraction of samples jittered around the surface with the narrow noise scale.
pub const NEAR_NARROW_FRACTION: f64 = 0.475;
pub const NEAR_WIDE_SIGMA: f64 = 0.05;
pub const NEAR_NARROW_SIGMA: f64 = 0.005;
/// Half width of the cube used for the uniform part of the mixture.
pub const UNIFORM_HALF_WIDTH: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfSample {
    pub point: Point3,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub shape_id: String,
    pub samples: Vec<SdfSample>,
}

impl SampleSet {
    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `x,y,z,s` rows with nine significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,z,s")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.8e},{:.8e},{:.8e},{:.8e}",
                s.point.x, s.point.y, s.point.z, s.value
            )?;
        }
        Ok(())
    }
}

/// Draw `n` supervision samples from `field`.
///
/// The mixture is 47.5% surface points with Gaussian offsets of
/// `0.05 * bounding_radius`, 47.5% with `0.005 * bounding_radius`, and the
/// remainder uniform in `[-1.1, 1.1]^3`. Each value is exactly
/// `field.eval(point)`.
pub fn sample_shape(
    field: &dyn ShapeField,
    shape_id: impl Into<String>,
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n < MIN_SAMPLES {
        return Err(invalid(format!(
            "need at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_wide = (n as f64 * NEAR_WIDE_FRACTION).round() as usize;
    let n_narrow = (n as f64 * NEAR_NARROW_FRACTION).round() as usize;
    let n_uniform = n - n_wide - n_narrow;

    let r = field.bounding_radius();
    let surface = field.sample_surface(n_wide + n_narrow, &mut rng);
    let wide = Normal::new(0.0, NEAR_WIDE_SIGMA * r).expect("finite sigma");
    let narrow = Normal::new(0.0, NEAR_NARROW_SIGMA * r).expect("finite sigma");

    let mut points = Vec::with_capacity(n);
    for (i, s) in surface.iter().enumerate() {
        let dist = if i < n_wide { &wide } else { &narrow };
        let jitter = Point3::new(
            dist.sample(&mut rng),
            dist.sample(&mut rng),
            dist.sample(&mut rng),
        );
        points.push(s + jitter);
    }
    for _ in 0..n_uniform {
        points.push(uniform_in_cube(&mut rng, UNIFORM_HALF_WIDTH));
    }

    let mut values = vec![0.0; points.len()];
    field.eval_batch(&points, &mut values);
    Ok(SampleSet {
        shape_id: shape_id.into(),
        samples: points
            .into_iter()
            .zip(values)
            .map(|(point, value)| SdfSample { point, value })
            .collect(),
    })
}
