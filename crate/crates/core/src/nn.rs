//! Small dense networks: multilayer perceptrons with an optional input skip
//! connection, reverse-mode gradients and Adam.
//!
//! Weights are stored `out × in`, activations row-major `batch × width`.

use std::ops::Range;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, NdFloat};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Floating-point element type of a network.
pub trait Float: NdFloat + FromPrimitive + ToPrimitive + Default {}
impl<T: NdFloat + FromPrimitive + ToPrimitive + Default> Float for T {}

pub(crate) fn cast<T: Float>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// `ln(1 + e^x)`: a ReLU without the kink, so the network output is
    /// continuously differentiable in its input.
    Softplus,
}

impl Activation {
    pub fn apply<T: Float>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => {
                if v > cast(30.0) {
                    v
                } else {
                    v.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative expressed through the activation's output `a`.
    fn slope_at_output<T: Float>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            // sigmoid(x) = 1 - e^(-softplus(x))
            Activation::Softplus => -(-a).exp_m1(),
        }
    }
}

/// Layer widths, skip placement and nonlinearity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Index of the layer whose input is `[previous activation, network input]`.
    pub skip_layer: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if let Some(k) = self.skip_layer {
            if k == 0 || k > self.hidden.len() {
                return Err(invalid(format!(
                    "skip layer {k} must be between 1 and {}",
                    self.hidden.len()
                )));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let prev = if l == 0 {
            self.input_dim
        } else {
            self.hidden[l - 1]
        };
        let fan_in = if self.skip_layer == Some(l) {
            prev + self.input_dim
        } else {
            prev
        };
        let fan_out = if l == self.hidden.len() {
            self.output_dim
        } else {
            self.hidden[l]
        };
        (fan_in, fan_out)
    }

    pub fn parameter_count(&self) -> usize {
        (0..self.layer_count())
            .map(|l| {
                let (i, o) = self.layer_shape(l);
                i * o + o
            })
            .sum()
    }
}

/// Weights and biases per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensors<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Float> Tensors<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let (weights, biases) = (0..arch.layer_count())
            .map(|l| {
                let (i, o) = arch.layer_shape(l);
                (Array2::zeros((o, i)), Array1::zeros(o))
            })
            .unzip();
        Self { weights, biases }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * k);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// All entries, layer by layer: weights (row-major) then biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn cast<U: Float>(&self) -> Tensors<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().expect("finite")).expect("representable");
        Tensors {
            weights: self.weights.iter().map(|w| w.map(conv)).collect(),
            biases: self.biases.iter().map(|b| b.map(conv)).collect(),
        }
    }
}

/// Dense network with a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub arch: Architecture,
    pub params: Tensors<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    /// Input to each layer (after skip concatenation).
    inputs: Vec<Array2<T>>,
    pub output: Array2<T>,
}

impl<T: Float> Mlp<T> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = Tensors::zeros(&arch);
        Ok(Self { arch, params })
    }

    /// He-normal hidden layers, variance `1/fan_in` output layer, zero biases.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let last = net.arch.layer_count() - 1;
        for (l, w) in net.params.weights.iter_mut().enumerate() {
            let fan_in = w.ncols() as f64;
            let gain = if l == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("finite sigma");
            w.mapv_inplace(|_| cast(normal.sample(rng)));
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Tensors<T>) -> Result<Self> {
        arch.validate()?;
        if params.weights.len() != arch.layer_count() || params.biases.len() != arch.layer_count() {
            return Err(invalid("layer count does not match the architecture"));
        }
        for l in 0..arch.layer_count() {
            let (i, o) = arch.layer_shape(l);
            if params.weights[l].dim() != (o, i) || params.biases[l].len() != o {
                return Err(invalid(format!("layer {l} has inconsistent shape")));
            }
        }
        Ok(Self { arch, params })
    }

    pub fn cast<U: Float>(&self) -> Mlp<U> {
        Mlp {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(invalid(format!(
                "network expects {} inputs, got {}",
                self.arch.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn layer_input(&self, l: usize, h: Array2<T>, x: &ArrayView2<T>) -> Array2<T> {
        if self.arch.skip_layer == Some(l) {
            concatenate(Axis(1), &[h.view(), x.view()]).expect("matching rows")
        } else {
            h
        }
    }

    fn affine(&self, l: usize, input: &ArrayView2<T>) -> Array2<T> {
        let mut z = input.dot(&self.params.weights[l].t());
        z += &self.params.biases[l];
        z
    }

    /// Outputs for a batch of rows.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let last = self.arch.layer_count() - 1;
        let mut h = x.to_owned();
        for l in 0..=last {
            let input = if l == 0 {
                h
            } else {
                self.layer_input(l, h, &x)
            };
            let mut z = self.affine(l, &input.view());
            if l < last {
                let act = self.arch.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<T>) -> Result<ForwardCache<T>> {
        self.check_input(&x)?;
        let last = self.arch.layer_count() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut h = x.to_owned();
        for l in 0..=last {
            let input = if l == 0 {
                h
            } else {
                self.layer_input(l, h, &x)
            };
            let mut z = self.affine(l, &input.view());
            if l < last {
                let act = self.arch.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            inputs.push(input);
            h = z;
        }
        Ok(ForwardCache { inputs, output: h })
    }

    /// Parameter gradients and input gradient given `d_out = dL/d output`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_out: ArrayView2<T>,
    ) -> (Tensors<T>, Array2<T>) {
        let layers = self.arch.layer_count();
        let mut grads = Tensors {
            weights: Vec::with_capacity(layers),
            biases: Vec::with_capacity(layers),
        };
        let rows = d_out.nrows();
        let mut d_input = Array2::<T>::zeros((rows, self.arch.input_dim));
        let mut d = d_out.to_owned();
        for l in (0..layers).rev() {
            let input = &cache.inputs[l];
            grads.weights.push(d.t().dot(input));
            grads.biases.push(d.sum_axis(Axis(0)));
            let d_in = d.dot(&self.params.weights[l]);
            if l == 0 {
                d_input += &d_in;
                break;
            }
            let prev_width = self.arch.hidden[l - 1];
            if self.arch.skip_layer == Some(l) {
                d_input += &d_in.slice(s![.., prev_width..]);
            }
            let act = input.slice(s![.., ..prev_width]);
            let mut next = d_in.slice(s![.., ..prev_width]).to_owned();
            let activation = self.arch.activation;
            next.zip_mut_with(&act, |g, &a| *g *= activation.slope_at_output(a));
            d = next;
        }
        grads.weights.reverse();
        grads.biases.reverse();
        (grads, d_input)
    }
}

/// Adam moment estimates for one tensor set.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    /// `sizes` lists the element count of every tensor that will be updated.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_tensors(lr: f64, t: &Tensors<T>) -> Self {
        let sizes: Vec<usize> = t
            .weights
            .iter()
            .map(|w| w.len())
            .chain(t.biases.iter().map(|b| b.len()))
            .collect();
        Self::new(lr, &sizes)
    }

    /// Advance the shared step counter; call once per optimizer step before
    /// [`Adam::update`].
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Update tensor `slot` in place.
    pub fn update<'a>(
        &mut self,
        slot: usize,
        param: impl Iterator<Item = &'a mut T>,
        grad: impl Iterator<Item = &'a T>,
    ) where
        T: 'a,
    {
        let (b1, b2) = (cast::<T>(self.beta1), cast::<T>(self.beta2));
        let one = T::one();
        let c1 = one - b1.powi(self.step);
        let c2 = one - b2.powi(self.step);
        let lr = cast::<T>(self.lr);
        let eps = cast::<T>(self.eps);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for ((p, &g), (mi, vi)) in param.zip(grad).zip(m.iter_mut().zip(v.iter_mut())) {
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    /// One step over a whole tensor set, slots laid out as in [`Adam::for_tensors`].
    pub fn step_tensors(&mut self, params: &mut Tensors<T>, grads: &Tensors<T>) {
        self.tick();
        let n = params.weights.len();
        for l in 0..n {
            self.update(l, params.weights[l].iter_mut(), grads.weights[l].iter());
        }
        for l in 0..n {
            self.update(n + l, params.biases[l].iter_mut(), grads.biases[l].iter());
        }
    }
}

/// Rows per independently processed chunk in batched gradient evaluation.
pub const GRADIENT_CHUNK: usize = 1024;

/// Evaluate `f` on consecutive row ranges of at most `chunk` rows (in
/// parallel) and fold the results in range order. The result is independent
/// of the number of worker threads.
pub fn map_chunks<R: Send>(
    rows: usize,
    chunk: usize,
    f: impl Fn(Range<usize>) -> R + Sync + Send,
    mut fold: impl FnMut(&mut R, R),
) -> Option<R> {
    let ranges: Vec<Range<usize>> = (0..rows)
        .step_by(chunk.max(1))
        .map(|a| a..(a + chunk).min(rows))
        .collect();
    let parts: Vec<R> = ranges.into_par_iter().map(f).collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next()?;
    for p in iter {
        fold(&mut acc, p);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            input_dim: 5,
            hidden: vec![8, 8, 8],
            output_dim: 2,
            skip_layer: Some(2),
            activation: Activation::Relu,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(small_arch()).unwrap();
        let x = Array2::from_elem((3, 5), 0.7);
        assert!(net.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![],
            output_dim: 1,
            skip_layer: None,
            activation: Activation::Relu,
        };
        let params = Tensors {
            weights: vec![array![[2.0, -3.0]]],
            biases: vec![array![0.5]],
        };
        let net = Mlp::from_params(arch, params).unwrap();
        let y = net.forward(array![[1.0, 4.0]].view()).unwrap();
        assert_eq!(y[[0, 0]], 2.0 - 12.0 + 0.5);
    }

    #[test]
    fn wrong_input_width_rejected() {
        let net = Mlp::<f32>::zeros(small_arch()).unwrap();
        assert!(net.forward(Array2::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::<f64>::init(small_arch(), &mut rng).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((4, 5), |_| normal.sample(&mut rng));
        // L = sum of outputs weighted by fixed coefficients
        let coef = array![[1.0, -0.5], [0.3, 2.0], [-1.0, 1.0], [0.2, 0.1]];
        let loss = |n: &Mlp<f64>, x: &Array2<f64>| (&n.forward(x.view()).unwrap() * &coef).sum();
        let cache = net.forward_cached(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, coef.view());
        let h = 1e-6;
        for l in 0..net.arch.layer_count() {
            for idx in [(0, 0), (1, 2)] {
                let mut p = net.clone();
                p.params.weights[l][idx] += h;
                let mut m = net.clone();
                m.params.weights[l][idx] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - g.weights[l][idx]).abs() < 1e-6, "layer {l}");
            }
        }
        for idx in [(0, 0), (3, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0f64, -2.0];
        let mut opt = Adam::<f64>::new(0.1, &[2]);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.tick();
            opt.update(0, x.iter_mut(), g.iter());
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn chunked_fold_is_ordered() {
        let out = map_chunks(10, 3, |r| vec![r.start], |a, b| a.extend(b)).unwrap();
        assert_eq!(out, vec![0, 3, 6, 9]);
        assert!(map_chunks(0, 3, |r| r.len(), |_, _| {}).is_none());
    }
}
