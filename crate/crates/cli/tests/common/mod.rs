#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vehiclesdf::autodecoder::{DecoderWeights, LatentVector, SdfTrainConfig};
use vehiclesdf::checkpoint::{self, Container};
use vehiclesdf::drag::{DragModel, FEATURE_LEN};
use vehiclesdf::nn::{Activation, Architecture, Mlp, Tensors};
use vehiclesdf::params::{EstimatorWeights, GeomParams, PARAM_COUNT};
use vehiclesdf_cli::model::Models;

pub const LATENT_DIM: usize = 4;

/// Decoder whose zero set is an L1 ball of radius 0.5, shifted slightly
/// along `x` by the first latent component.
pub fn tiny_decoder() -> DecoderWeights {
    let m = LATENT_DIM;
    let arch = Architecture {
        input_dim: m + 3,
        hidden: vec![6],
        output_dim: 1,
        skip_layer: None,
        activation: Activation::Relu,
    };
    let mut w0 = Array2::<f32>::zeros((6, m + 3));
    for axis in 0..3 {
        w0[[2 * axis, m + axis]] = 1.0;
        w0[[2 * axis + 1, m + axis]] = -1.0;
    }
    w0[[0, 0]] = 0.1;
    let params = Tensors {
        weights: vec![w0, Array2::ones((1, 6))],
        biases: vec![Array1::zeros(6), Array1::from(vec![-0.5])],
    };
    DecoderWeights::new(Mlp::from_params(arch, params).unwrap()).unwrap()
}

/// Random estimator shifted so that `target()` is exactly reachable at
/// `reachable_latent()`. Large hidden biases keep every unit active, so the
/// network is affine near the origin and optimization is convex.
pub fn tiny_estimator() -> EstimatorWeights {
    let arch = Architecture {
        input_dim: LATENT_DIM,
        hidden: vec![16],
        output_dim: PARAM_COUNT,
        skip_layer: None,
        activation: Activation::Relu,
    };
    let mut net: Mlp<f64> = Mlp::init(arch, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    net.params.biases[0].fill(10.0);
    let est = EstimatorWeights::new(net.clone()).unwrap();
    let here = est.estimate(&reachable_latent()).unwrap();
    let t = target();
    for k in 0..PARAM_COUNT {
        net.params.biases[1][k] += t.0[k] - here.0[k];
    }
    // Storage rounds to f32; round here so in-memory and loaded models agree.
    EstimatorWeights::new(net.cast::<f32>().cast::<f64>()).unwrap()
}

pub fn reachable_latent() -> LatentVector {
    LatentVector(vec![0.05, -0.02, 0.03, 0.01])
}

pub fn target() -> GeomParams {
    GeomParams([1.0, 0.28, 0.43, 0.037, 0.6, 0.2, 0.2])
}

/// Predicts a constant.
pub fn constant_drag_model(cd: f64) -> DragModel {
    DragModel {
        feature_count: FEATURE_LEN,
        base: cd,
        learning_rate: 0.1,
        trees: Vec::new(),
    }
}

pub fn tiny_models() -> Models {
    Models {
        decoder: tiny_decoder(),
        estimator: tiny_estimator(),
        drag: Some(constant_drag_model(0.31)),
    }
}

pub fn tiny_checkpoint() -> Container {
    let models = tiny_models();
    let mut c = Container::new();
    let cfg = SdfTrainConfig {
        latent_dim: LATENT_DIM,
        ..SdfTrainConfig::default()
    };
    checkpoint::put_decoder(&mut c, &models.decoder, &cfg).unwrap();
    checkpoint::put_estimator(&mut c, &models.estimator).unwrap();
    checkpoint::put_drag_model(&mut c, models.drag.as_ref().unwrap()).unwrap();
    c
}
