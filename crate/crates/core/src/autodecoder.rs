//! Auto-decoder: an MLP `f(z, x) -> s` trained jointly with one latent code
//! per shape, latent inference with frozen weights, and mesh decoding.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    marching_cubes_with, GridSpec, Isosurface, Point3, SampleSet, Sampling, ShapeField,
};
use crate::nn::{
    cast, map_chunks, Activation, Adam, Architecture, Float, Mlp, Tensors, GRADIENT_CHUNK,
};

/// A shape code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Draw from `N(0, sigma^2)`.
    pub fn random(dim: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        Self((0..dim).map(|_| normal.sample(&mut rng)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &LatentVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine(&self, other: &LatentVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Training hyperparameters and decoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfTrainConfig {
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Layer whose input re-concatenates `(z, x)`.
    pub skip_layer: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub latent_learning_rate: f64,
    /// Weight of `‖z‖²` in the per-sample loss.
    pub reg_weight: f64,
    pub latent_init_sigma: f64,
    /// Multiply both learning rates by `lr_decay` every `lr_decay_every` epochs
    /// (`0` disables decay).
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for SdfTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden_width: 128,
            hidden_layers: 6,
            skip_layer: 3,
            epochs: 30,
            batch_size: 4096,
            learning_rate: 5e-4,
            latent_learning_rate: 1e-3,
            reg_weight: 1e-4,
            latent_init_sigma: 0.01,
            lr_decay_every: 0,
            lr_decay: 0.5,
            seed: 0,
        }
    }
}

impl SdfTrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.latent_dim + 3,
            hidden: vec![self.hidden_width; self.hidden_layers],
            output_dim: 1,
            skip_layer: if self.skip_layer == 0 || self.skip_layer > self.hidden_layers {
                None
            } else {
                Some(self.skip_layer)
            },
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("hidden_width", self.hidden_width),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("learning_rate", self.learning_rate),
            ("latent_learning_rate", self.latent_learning_rate),
            ("latent_init_sigma", self.latent_init_sigma),
            ("lr_decay", self.lr_decay),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(invalid("reg_weight must be non-negative"));
        }
        self.architecture().validate()
    }
}

/// Decoder network parameters. Inputs are `[z, x, y, z_coord]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights<T = f32> {
    pub latent_dim: usize,
    pub net: Mlp<T>,
}

impl<T: Float> DecoderWeights<T> {
    pub fn new(net: Mlp<T>) -> Result<Self> {
        if net.arch.input_dim < 4 || net.arch.output_dim != 1 {
            return Err(invalid(
                "decoder must map latent + 3 coordinates to one value",
            ));
        }
        Ok(Self {
            latent_dim: net.arch.input_dim - 3,
            net,
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Self::new(Mlp::zeros(arch)?)
    }

    pub fn cast<U: Float>(&self) -> DecoderWeights<U> {
        DecoderWeights {
            latent_dim: self.latent_dim,
            net: self.net.cast(),
        }
    }

    fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.dim() != self.latent_dim {
            return Err(invalid(format!(
                "latent has dimension {}, decoder expects {}",
                z.dim(),
                self.latent_dim
            )));
        }
        Ok(())
    }

    fn input_rows(&self, z: &LatentVector, points: &[Point3]) -> Array2<T> {
        let m = self.latent_dim;
        let zc: Vec<T> = z.0.iter().map(|&v| cast(v)).collect();
        let mut x = Array2::zeros((points.len(), m + 3));
        for (mut row, p) in x.axis_iter_mut(Axis(0)).zip(points) {
            for (o, &v) in row.iter_mut().zip(&zc) {
                *o = v;
            }
            row[m] = cast(p.x);
            row[m + 1] = cast(p.y);
            row[m + 2] = cast(p.z);
        }
        x
    }

    /// `f(z, x)`.
    pub fn forward(&self, z: &LatentVector, x: &Point3) -> Result<f64> {
        Ok(self.forward_batch(z, std::slice::from_ref(x))?[0])
    }

    /// `f(z, x)` for many points. The latent's contribution to every layer
    /// that reads it is computed once, so this agrees with the plain network
    /// forward pass up to rounding.
    pub fn forward_batch(&self, z: &LatentVector, points: &[Point3]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let layers = self.condition(z);
        let act = self.net.arch.activation;
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(4096) {
            let p = Array2::from_shape_fn((chunk.len(), 3), |(i, k)| cast::<T>(chunk[i][k]));
            let mut h: Option<Array2<T>> = None;
            for (l, layer) in layers.iter().enumerate() {
                let mut a = match (&h, &layer.hidden) {
                    (Some(h), Some(w)) => h.dot(&w.t()),
                    _ => Array2::zeros((chunk.len(), layer.bias.len())),
                };
                if let Some(w) = &layer.coords {
                    a += &p.dot(&w.t());
                }
                a += &layer.bias;
                if l + 1 < layers.len() {
                    a.mapv_inplace(|v| act.apply(v));
                }
                h = Some(a);
            }
            let y = h.expect("at least one layer");
            out.extend(y.column(0).iter().map(|v| v.to_f64().expect("finite")));
        }
        Ok(out)
    }

    /// Split each layer's weights into the hidden, latent and coordinate
    /// blocks and fold the latent block into the bias.
    fn condition(&self, z: &LatentVector) -> Vec<ConditionedLayer<T>> {
        let m = self.latent_dim;
        let zc: Array1<T> = z.0.iter().map(|&v| cast(v)).collect();
        let arch = &self.net.arch;
        (0..arch.layer_count())
            .map(|l| {
                let w = &self.net.params.weights[l];
                let b = &self.net.params.biases[l];
                let reads_input = l == 0 || arch.skip_layer == Some(l);
                if !reads_input {
                    return ConditionedLayer {
                        hidden: Some(w.clone()),
                        coords: None,
                        bias: b.clone(),
                    };
                }
                let h = if l == 0 { 0 } else { arch.hidden[l - 1] };
                ConditionedLayer {
                    hidden: (h > 0).then(|| w.slice(s![.., ..h]).to_owned()),
                    coords: Some(w.slice(s![.., h + m..]).to_owned()),
                    bias: b + &w.slice(s![.., h..h + m]).dot(&zc),
                }
            })
            .collect()
    }

    /// Gradients of `(f(z, x) - target)^2` with respect to the weights and `z`.
    pub fn gradients(
        &self,
        z: &LatentVector,
        x: &Point3,
        target: f64,
    ) -> Result<(Tensors<T>, Vec<f64>)> {
        self.check_latent(z)?;
        let input = self.input_rows(z, std::slice::from_ref(x));
        let cache = self.net.forward_cached(input.view())?;
        let f = cache.output[[0, 0]];
        let d_out = Array2::from_elem((1, 1), cast::<T>(2.0) * (f - cast(target)));
        let (g, dx) = self.net.backward(&cache, d_out.view());
        let gz = dx
            .slice(s![0, ..self.latent_dim])
            .iter()
            .map(|v| v.to_f64().expect("finite"))
            .collect();
        Ok((g, gz))
    }
}

struct ConditionedLayer<T> {
    hidden: Option<Array2<T>>,
    coords: Option<Array2<T>>,
    bias: Array1<T>,
}

/// The decoder with a fixed latent, viewed as a signed distance field.
pub struct LatentField<'a> {
    pub weights: &'a DecoderWeights,
    pub z: &'a LatentVector,
}

impl ShapeField for LatentField<'_> {
    fn eval(&self, p: &Point3) -> f64 {
        self.weights
            .forward(self.z, p)
            .expect("dimension checked at construction")
    }

    fn bounding_radius(&self) -> f64 {
        1.0
    }

    fn eval_batch(&self, points: &[Point3], out: &mut [f64]) {
        let v = self
            .weights
            .forward_batch(self.z, points)
            .expect("dimension checked at construction");
        out.copy_from_slice(&v);
    }
}

/// Default lattice for decoding: 64³ over `[-0.95, 0.95]³`.
pub fn default_decode_grid() -> GridSpec {
    GridSpec {
        resolution: 64,
        half_extent: 0.95,
    }
}

/// Mesh the zero level set of `f(z, ·)`. Uses narrow-band sampling.
pub fn decode_to_mesh(
    weights: &DecoderWeights,
    z: &LatentVector,
    grid: &GridSpec,
) -> Result<Isosurface> {
    weights.check_latent(z)?;
    let field = LatentField { weights, z };
    marching_cubes_with(&field, grid, Sampling::DEFAULT_NARROW_BAND)
}

/// Loss terms for one epoch, averaged over batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub data: f64,
    pub reg: f64,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.data + self.reg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    /// Total loss on a fixed probe batch before and after training.
    pub probe_initial: f64,
    pub probe_final: f64,
    pub mean_latent_norm: f64,
    /// Not part of equality or serialization: timing varies between
    /// identical runs and saved artifacts must not.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.probe_initial == other.probe_initial
            && self.probe_final == other.probe_final
            && self.mean_latent_norm == other.mean_latent_norm
    }
}

/// Output of [`train_deepsdf`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedDecoder {
    pub weights: DecoderWeights,
    pub latents: BTreeMap<String, LatentVector>,
    pub report: TrainReport,
}

/// Flattened training rows.
struct Corpus {
    points: Vec<[f32; 3]>,
    values: Vec<f32>,
    shape: Vec<u32>,
}

impl Corpus {
    fn new(sets: &[SampleSet]) -> Self {
        let total: usize = sets.iter().map(SampleSet::count).sum();
        let mut c = Corpus {
            points: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            shape: Vec::with_capacity(total),
        };
        for (i, set) in sets.iter().enumerate() {
            for s in &set.samples {
                c.points
                    .push([s.point.x as f32, s.point.y as f32, s.point.z as f32]);
                c.values.push(s.value as f32);
                c.shape.push(i as u32);
            }
        }
        c
    }
}

/// Batch loss and gradients. Returns `(data_sum, reg_sum, weight grads, latent grads)`
/// where the gradients are of the batch-mean loss.
fn batch_step(
    net: &Mlp<f32>,
    latents: &Array2<f32>,
    corpus: &Corpus,
    rows: &[usize],
    reg_weight: f32,
) -> Result<(f64, f64, Tensors<f32>, Array2<f32>)> {
    let m = latents.ncols();
    let b = rows.len() as f32;
    let part = map_chunks(
        rows.len(),
        GRADIENT_CHUNK,
        |range| -> Result<(f64, Tensors<f32>, Array2<f32>)> {
            let idx = &rows[range];
            let mut x = Array2::<f32>::zeros((idx.len(), m + 3));
            for (mut row, &r) in x.axis_iter_mut(Axis(0)).zip(idx) {
                let z = latents.row(corpus.shape[r] as usize);
                row.slice_mut(s![..m]).assign(&z);
                let p = corpus.points[r];
                row[m] = p[0];
                row[m + 1] = p[1];
                row[m + 2] = p[2];
            }
            let cache = net.forward_cached(x.view())?;
            let mut d_out = Array2::<f32>::zeros((idx.len(), 1));
            let mut data = 0.0f64;
            for (k, &r) in idx.iter().enumerate() {
                let e = cache.output[[k, 0]] - corpus.values[r];
                data += (e as f64) * (e as f64);
                d_out[[k, 0]] = 2.0 * e / b;
            }
            let (g, dx) = net.backward(&cache, d_out.view());
            let mut gz = Array2::<f32>::zeros(latents.dim());
            for (k, &r) in idx.iter().enumerate() {
                let mut row = gz.row_mut(corpus.shape[r] as usize);
                row += &dx.slice(s![k, ..m]);
            }
            Ok((data, g, gz))
        },
        |acc, next| match (acc, next) {
            (Ok(a), Ok(n)) => {
                a.0 += n.0;
                a.1.add_assign(&n.1);
                a.2 += &n.2;
            }
            (acc @ Ok(_), Err(e)) => *acc = Err(e),
            _ => {}
        },
    )
    .ok_or_else(|| invalid("empty batch"))?;
    let (data, grads, mut gz) = part?;

    let mut reg = 0.0f64;
    let mut counts = vec![0usize; latents.nrows()];
    for &r in rows {
        counts[corpus.shape[r] as usize] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let z = latents.row(i);
        let sq: f32 = z.iter().map(|v| v * v).sum();
        reg += reg_weight as f64 * sq as f64 * c as f64;
        let k = 2.0 * reg_weight * c as f32 / b;
        let mut g = gz.row_mut(i);
        g.scaled_add(k, &z);
    }
    Ok((data, reg, grads, gz))
}

/// Jointly fit decoder weights and one latent per sample set.
pub fn train_deepsdf(corpus: &[SampleSet], config: &SdfTrainConfig) -> Result<TrainedDecoder> {
    config.validate()?;
    if corpus.len() < 2 {
        return Err(invalid(format!(
            "need at least 2 shapes, got {}",
            corpus.len()
        )));
    }
    if let Some(s) = corpus.iter().find(|s| s.is_empty()) {
        return Err(invalid(format!("sample set {} is empty", s.shape_id)));
    }
    let mut ids = std::collections::HashSet::new();
    for s in corpus {
        if !ids.insert(s.shape_id.as_str()) {
            return Err(invalid(format!("duplicate shape id {}", s.shape_id)));
        }
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = config.architecture();
    let mut net: Mlp<f32> = Mlp::init(arch, &mut rng)?;
    let m = config.latent_dim;
    let normal = Normal::new(0.0, config.latent_init_sigma).expect("finite sigma");
    let mut latents =
        Array2::<f32>::from_shape_fn((corpus.len(), m), |_| normal.sample(&mut rng) as f32);

    let data = Corpus::new(corpus);
    let n = data.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut probe = order.clone();
    probe.shuffle(&mut rng);
    probe.truncate(config.batch_size.min(n));
    probe.sort_unstable();
    let reg_weight = config.reg_weight as f32;
    let probe_loss = |net: &Mlp<f32>, latents: &Array2<f32>| -> Result<f64> {
        let (d, r, _, _) = batch_step(net, latents, &data, &probe, reg_weight)?;
        Ok((d + r) / probe.len() as f64)
    };
    let probe_initial = probe_loss(&net, &latents)?;

    let mut opt = Adam::for_tensors(config.learning_rate, &net.params);
    let mut latent_opt = Adam::<f32>::new(config.latent_learning_rate, &[latents.len()]);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if config.lr_decay_every > 0 && epoch > 0 && epoch % config.lr_decay_every == 0 {
            opt.lr *= config.lr_decay;
            latent_opt.lr *= config.lr_decay;
        }
        order.shuffle(&mut rng);
        let (mut data_sum, mut reg_sum, mut batches) = (0.0, 0.0, 0usize);
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            let (d, r, grads, gz) = batch_step(&net, &latents, &data, rows, reg_weight)?;
            if !(d.is_finite() && r.is_finite()) || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: format!("loss data={d} reg={r}"),
                });
            }
            data_sum += d / rows.len() as f64;
            reg_sum += r / rows.len() as f64;
            batches += 1;
            opt.step_tensors(&mut net.params, &grads);
            latent_opt.tick();
            latent_opt.update(0, latents.iter_mut(), gz.iter());
        }
        epochs.push(EpochLoss {
            data: data_sum / batches as f64,
            reg: reg_sum / batches as f64,
        });
    }
    let probe_final = probe_loss(&net, &latents)?;

    let latents: BTreeMap<String, LatentVector> = corpus
        .iter()
        .zip(latents.axis_iter(Axis(0)))
        .map(|(s, z)| {
            (
                s.shape_id.clone(),
                LatentVector(z.iter().map(|&v| v as f64).collect()),
            )
        })
        .collect();
    let mean_latent_norm =
        latents.values().map(LatentVector::norm).sum::<f64>() / latents.len() as f64;
    Ok(TrainedDecoder {
        weights: DecoderWeights::new(net)?,
        latents,
        report: TrainReport {
            epochs,
            probe_initial,
            probe_final,
            mean_latent_norm,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    })
}

/// Settings for fitting a latent to samples with frozen weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub reg_weight: f64,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            learning_rate: 5e-3,
            reg_weight: 1e-4,
            init_sigma: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Mean `(f(z, x) - s)^2 + reg ‖z‖²` over `samples` and its gradient in `z`.
pub fn latent_loss(
    weights: &DecoderWeights,
    samples: &SampleSet,
    z: &LatentVector,
    reg_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    weights.check_latent(z)?;
    let m = weights.latent_dim;
    let n = samples.count();
    let points: Vec<Point3> = samples.samples.iter().map(|s| s.point).collect();
    let x = weights.input_rows(z, &points);
    let (data, gz) = map_chunks(
        n,
        GRADIENT_CHUNK,
        |range| -> Result<(f64, Vec<f64>)> {
            let xs: ArrayView2<f32> = x.slice(s![range.clone(), ..]);
            let cache = weights.net.forward_cached(xs)?;
            let mut d_out = Array2::<f32>::zeros((range.len(), 1));
            let mut data = 0.0f64;
            for (k, s) in samples.samples[range].iter().enumerate() {
                let e = cache.output[[k, 0]] as f64 - s.value;
                data += e * e;
                d_out[[k, 0]] = (2.0 * e / n as f64) as f32;
            }
            let (_, dx) = weights.net.backward(&cache, d_out.view());
            let gz = dx
                .slice(s![.., ..m])
                .sum_axis(Axis(0))
                .iter()
                .map(|&v| v as f64)
                .collect();
            Ok((data, gz))
        },
        |acc, next| match (acc, next) {
            (Ok(a), Ok(b)) => {
                a.0 += b.0;
                for (x, y) in a.1.iter_mut().zip(b.1) {
                    *x += y;
                }
            }
            (acc @ Ok(_), Err(e)) => *acc = Err(e),
            _ => {}
        },
    )
    .ok_or_else(|| invalid("sample set is empty"))??;
    let sq: f64 = z.0.iter().map(|v| v * v).sum();
    let grad = gz
        .iter()
        .zip(&z.0)
        .map(|(g, zi)| g + 2.0 * reg_weight * zi)
        .collect();
    Ok((data / n as f64 + reg_weight * sq, grad))
}

/// Fit a latent code to `samples` starting from `N(0, init_sigma²)`.
pub fn infer_latent(
    weights: &DecoderWeights,
    samples: &SampleSet,
    config: &InferConfig,
) -> Result<(LatentVector, InferReport)> {
    let init = LatentVector::random(weights.latent_dim, config.init_sigma, config.seed);
    infer_latent_from(weights, samples, init, config)
}

/// Fit a latent code starting from `init`. Returns the best code seen, so the
/// final loss never exceeds the initial one.
pub fn infer_latent_from(
    weights: &DecoderWeights,
    samples: &SampleSet,
    init: LatentVector,
    config: &InferConfig,
) -> Result<(LatentVector, InferReport)> {
    if samples.is_empty() {
        return Err(invalid("cannot infer a latent from an empty sample set"));
    }
    weights.check_latent(&init)?;
    let mut z = init;
    let mut opt = Adam::<f64>::new(config.learning_rate, &[z.dim()]);
    let (initial_loss, mut grad) = latent_loss(weights, samples, &z, config.reg_weight)?;
    let mut best = (initial_loss, z.clone());
    let mut losses = vec![initial_loss];
    for _ in 0..config.iterations {
        opt.tick();
        opt.update(0, z.0.iter_mut(), grad.iter());
        let (loss, g) = latent_loss(weights, samples, &z, config.reg_weight)?;
        if !loss.is_finite() || loss > 10.0 * initial_loss {
            return Err(Error::Divergence(format!(
                "latent inference loss rose from {initial_loss:.3e} to {loss:.3e}; trace {:?}",
                &losses[losses.len().saturating_sub(5)..]
            )));
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, z.clone());
        }
        grad = g;
    }
    Ok((
        best.1,
        InferReport {
            initial_loss,
            final_loss: best.0,
            losses,
        },
    ))
}
