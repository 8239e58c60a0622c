//! The seven length-normalized vehicle parameters and everything that
//! produces or consumes them.

pub mod augment;
pub mod estimator;
pub mod extract;
pub mod optimize;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use augment::{augment_dataset, interpolate_latents, measure_latent, AugmentConfig, Augmented};
pub use estimator::{
    evaluate, train_estimator, train_estimator_split, EstimatorConfig, EstimatorMetrics,
    EstimatorWeights, SplitMetrics,
};
pub use extract::{extract_params, fit_circle_3pts, ExtractionConfig, Landmarks};
pub use optimize::{
    nearest_neighbor, optimize_latent_from, optimize_latent_observed, optimize_latent_to_target,
    OptimizationTrace, OptimizeConfig, TraceRow,
};

/// Number of geometric parameters.
pub const PARAM_COUNT: usize = 7;

/// Column names in canonical order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "length",
    "height",
    "width",
    "ground_clearance",
    "wheelbase",
    "front_overhang",
    "rear_overhang",
];

/// `(length, height, width, ground clearance, wheelbase, front overhang,
/// rear overhang)`, divided by the length so `p0 == 1`.
///
/// Serializes as a plain 7-element array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeomParams(pub [f64; PARAM_COUNT]);

impl GeomParams {
    /// Normalize raw measurements by `length`.
    pub fn from_measurements(
        length: f64,
        height: f64,
        width: f64,
        clearance: f64,
        wheelbase: f64,
        front_overhang: f64,
        rear_overhang: f64,
    ) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid(format!("length must be positive, got {length}")));
        }
        let raw = [
            length,
            height,
            width,
            clearance,
            wheelbase,
            front_overhang,
            rear_overhang,
        ];
        let mut p = [0.0; PARAM_COUNT];
        for (o, v) in p.iter_mut().zip(raw) {
            *o = v / length;
        }
        p[0] = 1.0;
        Ok(Self(p))
    }

    /// Parse a target vector, checking arity and finiteness.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(invalid(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        let mut p = [0.0; PARAM_COUNT];
        p.copy_from_slice(values);
        Ok(Self(p))
    }

    /// Parse `"1.0,0.28,..."`.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad parameter {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_slice(&values)
    }

    pub fn as_array(&self) -> &[f64; PARAM_COUNT] {
        &self.0
    }

    pub fn length(&self) -> f64 {
        self.0[0]
    }
    pub fn height(&self) -> f64 {
        self.0[1]
    }
    pub fn width(&self) -> f64 {
        self.0[2]
    }
    pub fn ground_clearance(&self) -> f64 {
        self.0[3]
    }
    pub fn wheelbase(&self) -> f64 {
        self.0[4]
    }
    pub fn front_overhang(&self) -> f64 {
        self.0[5]
    }
    pub fn rear_overhang(&self) -> f64 {
        self.0[6]
    }

    /// Mean squared difference over all seven components.
    pub fn mse(&self, other: &GeomParams) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / PARAM_COUNT as f64
    }

    /// Largest absolute component difference.
    pub fn max_abs_diff(&self, other: &GeomParams) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        self.0
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_fixes_length_to_one() {
        let p = GeomParams::from_measurements(4.0, 1.2, 1.6, 0.2, 2.4, 0.8, 0.8).unwrap();
        assert_eq!(p.length(), 1.0);
        assert!((p.wheelbase() + p.front_overhang() + p.rear_overhang() - 1.0).abs() < 1e-12);
        assert!((p.height() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn arity_is_checked() {
        let err = GeomParams::parse_csv("1.0,0.28").unwrap_err();
        assert!(err.to_string().contains("expected 7"));
        assert!(GeomParams::parse_csv("1.0,0.28,0.43,0.037,0.6,0.2,0.2").is_ok());
    }

    #[test]
    fn serializes_as_array() {
        let p = GeomParams([1.0, 0.28, 0.43, 0.037, 0.6, 0.2, 0.2]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1.0,0.28,0.43,0.037,0.6,0.2,0.2]");
        let back: GeomParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
