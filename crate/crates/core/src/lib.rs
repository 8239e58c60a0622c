//! Latent-code signed distance models for car-like shapes.

pub mod autodecoder;
pub mod checkpoint;
pub mod drag;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod toycar;

pub use error::{Error, Result};
