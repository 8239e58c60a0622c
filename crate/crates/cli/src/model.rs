//! Loaded models and the optimize-then-decode routine shared by the CLI and
//! the service.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vehiclesdf::autodecoder::{decode_to_mesh, DecoderWeights, LatentVector};
use vehiclesdf::checkpoint::{self, Container};
use vehiclesdf::drag::DragModel;
use vehiclesdf::geometry::{GridSpec, TriangleMesh};
use vehiclesdf::params::{
    extract_params, optimize_latent_observed, EstimatorWeights, ExtractionConfig, GeomParams,
    OptimizationTrace, OptimizeConfig, TraceRow, PARAM_COUNT,
};
use vehiclesdf::toycar::CorpusManifest;

/// Decoder and estimator are required; the drag model and parameter
/// bounds are optional.
#[derive(Clone, Debug)]
pub struct Models {
    pub decoder: DecoderWeights,
    pub estimator: EstimatorWeights,
    pub drag: Option<DragModel>,
}

impl Models {
    pub fn from_container(c: &Container) -> vehiclesdf::Result<Self> {
        let drag = if c.contains(checkpoint::names::DRAG_MODEL) {
            Some(checkpoint::get_drag_model(c)?)
        } else {
            None
        };
        Ok(Self {
            decoder: checkpoint::get_decoder(c)?,
            estimator: checkpoint::get_estimator(c)?,
            drag,
        })
    }

    pub fn load(path: &Path) -> vehiclesdf::Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Per-parameter minimum, median and maximum over a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub min: GeomParams,
    pub median: GeomParams,
    pub max: GeomParams,
    pub count: usize,
}

impl ParamBounds {
    pub fn from_manifest(m: &CorpusManifest) -> Option<Self> {
        if m.entries.is_empty() {
            return None;
        }
        let mut min = [0.0; PARAM_COUNT];
        let mut median = [0.0; PARAM_COUNT];
        let mut max = [0.0; PARAM_COUNT];
        for k in 0..PARAM_COUNT {
            let mut col: Vec<f64> = m.entries.iter().map(|e| e.true_params.0[k]).collect();
            col.sort_by(f64::total_cmp);
            min[k] = col[0];
            max[k] = col[col.len() - 1];
            median[k] = col[col.len() / 2];
        }
        Some(Self {
            min: GeomParams(min),
            median: GeomParams(median),
            max: GeomParams(max),
            count: m.entries.len(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub latent: LatentVector,
    pub trace: OptimizationTrace,
    pub mesh: TriangleMesh,
    /// Parameters measured on the decoded mesh; `None` if the mesh is empty,
    /// clipped by the lattice, or extraction failed.
    pub extracted: Option<GeomParams>,
}

/// Optimize a latent from the seed's random start, decode it and measure
/// the result.
pub fn optimize_and_decode(
    models: &Models,
    target: &GeomParams,
    seed: u64,
    config: &OptimizeConfig,
    grid: &GridSpec,
    observe: &mut dyn FnMut(&TraceRow),
) -> vehiclesdf::Result<Outcome> {
    let init = LatentVector::random(models.estimator.latent_dim(), config.init_sigma, seed);
    let (latent, trace) =
        optimize_latent_observed(&models.estimator, target, init, config, observe)?;
    let iso = decode_to_mesh(&models.decoder, &latent, grid)?;
    let extracted = if iso.mesh.is_empty() || iso.touches_boundary {
        None
    } else {
        extract_params(&iso.mesh, &ExtractionConfig::for_grid(grid.cell_size()))
            .ok()
            .map(|(p, _)| p)
    };
    Ok(Outcome {
        latent,
        trace,
        mesh: iso.mesh,
        extracted,
    })
}
