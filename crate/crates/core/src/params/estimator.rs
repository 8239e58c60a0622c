//! Surrogate estimator `g(z) -> p` from latent codes to parameters.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeomParams, PARAM_COUNT};
use crate::autodecoder::LatentVector;
use crate::error::{invalid, Error, Result};
use crate::metrics;
use crate::nn::{map_chunks, Activation, Adam, Architecture, Mlp, Tensors, GRADIENT_CHUNK};

/// Minimum number of records accepted by [`train_estimator`].
pub const MIN_RECORDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of records used for training; the rest are held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 3],
            activation: Activation::Softplus,
            epochs: 300,
            batch_size: 64,
            learning_rate: 5e-4,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Multilayer perceptron from `R^m` to the seven parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorWeights {
    pub net: Mlp<f64>,
}

impl EstimatorWeights {
    pub fn new(net: Mlp<f64>) -> Result<Self> {
        if net.arch.output_dim != PARAM_COUNT {
            return Err(invalid(format!(
                "estimator must output {PARAM_COUNT} values, got {}",
                net.arch.output_dim
            )));
        }
        Ok(Self { net })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.arch.input_dim
    }

    fn check(&self, z: &LatentVector) -> Result<()> {
        if z.dim() != self.latent_dim() {
            return Err(invalid(format!(
                "latent has dimension {}, estimator expects {}",
                z.dim(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// Raw prediction; `p0` is learned, not forced to 1.
    pub fn estimate(&self, z: &LatentVector) -> Result<GeomParams> {
        self.check(z)?;
        let x = Array2::from_shape_vec((1, z.dim()), z.0.clone()).expect("row shape");
        let y = self.net.forward(x.view())?;
        let mut p = [0.0; PARAM_COUNT];
        p.iter_mut().zip(y.row(0)).for_each(|(o, &v)| *o = v);
        Ok(GeomParams(p))
    }

    /// `MSE(g(z), target)` and its gradient with respect to `z`.
    pub fn mse_and_grad(
        &self,
        z: &LatentVector,
        target: &GeomParams,
    ) -> Result<(f64, Vec<f64>, GeomParams)> {
        self.check(z)?;
        let x = Array2::from_shape_vec((1, z.dim()), z.0.clone()).expect("row shape");
        let cache = self.net.forward_cached(x.view())?;
        let mut d_out = Array2::<f64>::zeros((1, PARAM_COUNT));
        let mut mse = 0.0;
        let mut p = [0.0; PARAM_COUNT];
        for k in 0..PARAM_COUNT {
            let e = cache.output[[0, k]] - target.0[k];
            p[k] = cache.output[[0, k]];
            mse += e * e / PARAM_COUNT as f64;
            d_out[[0, k]] = 2.0 * e / PARAM_COUNT as f64;
        }
        let (_, dx) = self.net.backward(&cache, d_out.view());
        Ok((mse, dx.row(0).to_vec(), GeomParams(p)))
    }

    /// Gradient of `MSE(g(z), target)` with respect to the estimator weights.
    pub fn weight_gradients(&self, z: &LatentVector, target: &GeomParams) -> Result<Tensors<f64>> {
        self.check(z)?;
        let x = Array2::from_shape_vec((1, z.dim()), z.0.clone()).expect("row shape");
        let cache = self.net.forward_cached(x.view())?;
        let d_out = Array2::from_shape_fn((1, PARAM_COUNT), |(_, k)| {
            2.0 * (cache.output[[0, k]] - target.0[k]) / PARAM_COUNT as f64
        });
        Ok(self.net.backward(&cache, d_out.view()).0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub mse: f64,
    pub r2: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub train: SplitMetrics,
    pub test: SplitMetrics,
}

/// Evaluate on a record set.
pub fn evaluate(
    est: &EstimatorWeights,
    data: &[(LatentVector, GeomParams)],
) -> Result<SplitMetrics> {
    let pred = data
        .iter()
        .map(|(z, _)| est.estimate(z).map(|p| p.0))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<[f64; PARAM_COUNT]> = data.iter().map(|(_, p)| p.0).collect();
    Ok(SplitMetrics {
        mse: metrics::mse(&pred, &truth),
        r2: metrics::r2(&pred, &truth),
        count: data.len(),
    })
}

/// Column means and standard deviations; constant columns get unit scale.
fn standardization(rows: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let std = rows
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-9 { s } else { 1.0 });
    (mean, std)
}

/// Shuffle with `config.seed`, split by `train_fraction`, train and evaluate.
pub fn train_estimator(
    data: &[(LatentVector, GeomParams)],
    config: &EstimatorConfig,
) -> Result<(EstimatorWeights, EstimatorMetrics)> {
    if data.len() < MIN_RECORDS {
        return Err(invalid(format!(
            "need at least {MIN_RECORDS} records, got {}",
            data.len()
        )));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(invalid("train_fraction must be in (0, 1]"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_train =
        ((data.len() as f64 * config.train_fraction).round() as usize).clamp(1, data.len());
    let train: Vec<_> = idx[..n_train].iter().map(|&i| data[i].clone()).collect();
    let test: Vec<_> = idx[n_train..].iter().map(|&i| data[i].clone()).collect();
    let test = if test.is_empty() { train.clone() } else { test };
    train_estimator_split(&train, &test, config)
}

/// Train on `train`, report metrics on both sets.
///
/// Inputs and targets are standardized during training and the affine maps
/// are folded back into the first and last layers afterwards, so the
/// returned network consumes raw latents and emits raw parameters.
pub fn train_estimator_split(
    train: &[(LatentVector, GeomParams)],
    test: &[(LatentVector, GeomParams)],
    config: &EstimatorConfig,
) -> Result<(EstimatorWeights, EstimatorMetrics)> {
    if train.is_empty() {
        return Err(invalid("training split is empty"));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(invalid("epochs and batch_size must be positive"));
    }
    let m = train[0].0.dim();
    if train.iter().chain(test).any(|(z, _)| z.dim() != m) {
        return Err(invalid("latents have inconsistent dimensions"));
    }
    let n = train.len();
    let x = Array2::from_shape_fn((n, m), |(i, j)| train[i].0 .0[j]);
    let y = Array2::from_shape_fn((n, PARAM_COUNT), |(i, j)| train[i].1 .0[j]);
    let (x_mean, x_std) = standardization(&x);
    let (y_mean, y_std) = standardization(&y);
    let xs = (&x - &x_mean) / &x_std;
    let ys = (&y - &y_mean) / &y_std;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e571);
    let arch = Architecture {
        input_dim: m,
        hidden: config.hidden.clone(),
        output_dim: PARAM_COUNT,
        skip_layer: None,
        activation: config.activation,
    };
    let mut net: Mlp<f64> = Mlp::init(arch, &mut rng)?;
    let mut opt = Adam::for_tensors(config.learning_rate, &net.params);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            let b = rows.len() as f64;
            let grads = map_chunks(
                rows.len(),
                GRADIENT_CHUNK,
                |r| -> Result<Tensors<f64>> {
                    let idx = &rows[r];
                    let xb = xs.select(Axis(0), idx);
                    let cache = net.forward_cached(xb.view())?;
                    let yb = ys.select(Axis(0), idx);
                    let d_out = (&cache.output - &yb) * (2.0 / (b * PARAM_COUNT as f64));
                    Ok(net.backward(&cache, d_out.view()).0)
                },
                |acc, next| match (acc, next) {
                    (Ok(a), Ok(g)) => a.add_assign(&g),
                    (acc @ Ok(_), Err(e)) => *acc = Err(e),
                    _ => {}
                },
            )
            .expect("non-empty batch")?;
            if !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: "non-finite estimator gradient".into(),
                });
            }
            opt.step_tensors(&mut net.params, &grads);
        }
    }

    // Fold the standardization into the first and last layers.
    let w0 = &mut net.params.weights[0];
    for (j, mut col) in w0.axis_iter_mut(Axis(1)).enumerate() {
        col /= x_std[j];
    }
    let shift = w0.dot(&x_mean);
    net.params.biases[0] -= &shift;
    let last = net.params.weights.len() - 1;
    for (k, mut row) in net.params.weights[last].axis_iter_mut(Axis(0)).enumerate() {
        row *= y_std[k];
    }
    let bl = &mut net.params.biases[last];
    *bl = &*bl * &y_std + &y_mean;

    let est = EstimatorWeights::new(net)?;
    let metrics = EstimatorMetrics {
        train: evaluate(&est, train)?,
        test: evaluate(&est, test)?,
    };
    if !(metrics.train.mse.is_finite()) {
        return Err(Error::Diverged {
            epoch: config.epochs,
            batch: 0,
            detail: "non-finite training error".into(),
        });
    }
    Ok((est, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(z: Vec<f64>) -> (LatentVector, GeomParams) {
        let p = GeomParams([
            1.0,
            0.3 + 0.1 * z[0],
            0.4 - 0.05 * z[1],
            0.05,
            0.6,
            0.2,
            0.2,
        ]);
        (LatentVector(z), p)
    }

    #[test]
    fn too_few_records() {
        let data: Vec<_> = (0..9).map(|i| record(vec![i as f64, 0.0])).collect();
        assert!(matches!(
            train_estimator(&data, &EstimatorConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn memorizes_duplicated_record() {
        let data: Vec<_> = (0..12).map(|_| record(vec![0.5, -0.2, 0.1])).collect();
        let cfg = EstimatorConfig {
            hidden: vec![16, 16],
            epochs: 1000,
            learning_rate: 5e-3,
            ..Default::default()
        };
        let (est, m) = train_estimator(&data, &cfg).unwrap();
        assert!(m.train.mse < 1e-8, "{}", m.train.mse);
        let p = est.estimate(&data[0].0).unwrap();
        assert!(p.mse(&data[0].1) < 1e-8);
    }

    #[test]
    fn learns_smooth_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<_> = (0..300)
            .map(|_| {
                let z = LatentVector::random(4, 1.0, rand::Rng::random(&mut rng));
                record(z.0)
            })
            .collect();
        let cfg = EstimatorConfig {
            hidden: vec![32, 32],
            epochs: 100,
            learning_rate: 2e-3,
            ..Default::default()
        };
        let (_, m) = train_estimator(&data, &cfg).unwrap();
        assert!(m.test.r2 > 0.95, "{m:?}");
    }

    #[test]
    fn zero_weights_output_bias() {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![4],
            output_dim: 7,
            skip_layer: None,
            activation: Activation::Relu,
        };
        let mut net = Mlp::<f64>::zeros(arch).unwrap();
        net.params.biases[1] = Array1::from(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let est = EstimatorWeights::new(net).unwrap();
        let p = est.estimate(&LatentVector(vec![0.3, 0.1, -4.0])).unwrap();
        assert_eq!(p.0, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(est.estimate(&LatentVector(vec![0.0; 2])).is_err());
    }
}
