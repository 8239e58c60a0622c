use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error(
        "mesh is not watertight: edge ({0}, {1}) is not shared by exactly two opposing triangles"
    )]
    NotWatertight(usize, usize),

    #[error("parameter extraction failed: {0}")]
    ExtractionFailure(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("optimization diverged: {0}")]
    Divergence(String),

    #[error("ray parity failed after retries at point ({0}, {1}, {2})")]
    RayParity(f64, f64, f64),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
