//! Rendering, image features and a tree-ensemble drag surrogate.

pub mod boost;
pub mod canny;
pub mod features;
pub mod render;

pub use boost::{
    evaluate_drag, fit_boosted, train_drag_model, BoostConfig, DragMetrics, DragModel,
    RegressionMetrics, RegressionTree,
};
pub use canny::{canny_edges, canny_gray, EdgeMap};
pub use features::{drag_features, synthetic_cd, OracleTerms, FEATURE_LEN};
pub use render::{
    build_atlas, render_view, Channel, NormalAtlas, View, ViewImage, DEFAULT_RESOLUTION,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{marching_cubes, GridSpec, TriangleMesh};
use crate::toycar::{make_toy_car, ToyCarSpec};

/// Lateral scale applied by the width augmentation.
pub const WIDTH_INCREMENT: f64 = 1.1;

/// Features and label of one mesh, at [`DEFAULT_RESOLUTION`].
pub fn label_mesh(mesh: &TriangleMesh) -> Result<(Vec<f64>, OracleTerms)> {
    let atlas = build_atlas(mesh, DEFAULT_RESOLUTION)?;
    let cd = synthetic_cd(&atlas)?;
    Ok((drag_features(&atlas), cd))
}

pub fn predict_cd(model: &DragModel, mesh: &TriangleMesh) -> Result<f64> {
    let atlas = build_atlas(mesh, DEFAULT_RESOLUTION)?;
    model.predict(&drag_features(&atlas))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragRecord {
    pub shape_id: String,
    pub features: Vec<f64>,
    pub cd: f64,
}

/// Mesh a toy car, optionally widened and mirrored.
pub fn toy_car_mesh(
    spec: &ToyCarSpec,
    grid: &GridSpec,
    widen: bool,
    flip: bool,
) -> Result<TriangleMesh> {
    let spec = if widen {
        spec.widened(WIDTH_INCREMENT)
    } else {
        *spec
    };
    let car = make_toy_car(&spec)?;
    let mesh = marching_cubes(&car.shape, grid)?.mesh;
    Ok(if flip { mesh.mirrored_z() } else { mesh })
}

/// Label every car; with `augment`, each car contributes four records
/// (original and widened, each also mirrored). Record order follows the
/// input order.
pub fn build_drag_corpus(
    cars: &[(String, ToyCarSpec)],
    grid: &GridSpec,
    augment: bool,
) -> Result<Vec<DragRecord>> {
    let variants: &[(bool, bool, &str)] = if augment {
        &[
            (false, false, ""),
            (false, true, "-flip"),
            (true, false, "-wide"),
            (true, true, "-wide-flip"),
        ]
    } else {
        &[(false, false, "")]
    };
    let jobs: Vec<(&String, &ToyCarSpec, bool, bool, &str)> = cars
        .iter()
        .flat_map(|(id, spec)| variants.iter().map(move |&(w, f, s)| (id, spec, w, f, s)))
        .collect();
    jobs.par_iter()
        .map(|&(id, spec, widen, flip, suffix)| {
            let mesh = toy_car_mesh(spec, grid, widen, flip)?;
            let (features, terms) = label_mesh(&mesh)?;
            Ok(DragRecord {
                shape_id: format!("{id}{suffix}"),
                features,
                cd: terms.cd,
            })
        })
        .collect()
}
