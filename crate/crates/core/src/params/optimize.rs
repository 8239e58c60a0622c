//! Searching latent space for a code whose estimated parameters match a target.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::estimator::EstimatorWeights;
use super::{GeomParams, PARAM_COUNT};
use crate::autodecoder::LatentVector;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub max_steps: usize,
    /// Initial gradient step size.
    pub step_size: f64,
    /// Stop once the MSE to the target is at or below this.
    pub tolerance: f64,
    /// Standard deviation of the random initial latent.
    pub init_sigma: f64,
    /// Keep a copy of `z` in every trace row.
    pub record_latents: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            max_steps: 5000,
            step_size: 1.0,
            tolerance: 1e-6,
            init_sigma: 0.01,
            record_latents: false,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.tolerance >= 0.0 && self.init_sigma > 0.0) {
            return Err(invalid(
                "step_size and init_sigma must be positive, tolerance non-negative",
            ));
        }
        Ok(())
    }
}

/// One accepted iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub params: GeomParams,
    pub mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
}

impl OptimizationTrace {
    pub fn final_row(&self) -> &TraceRow {
        self.rows.last().expect("trace always has an initial row")
    }

    /// CSV with columns `iter,p0..p6,mse`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "iter")?;
        for k in 0..PARAM_COUNT {
            write!(w, ",p{k}")?;
        }
        writeln!(w, ",mse")?;
        for r in &self.rows {
            write!(w, "{}", r.iter)?;
            for v in r.params.0 {
                write!(w, ",{v:.9e}")?;
            }
            writeln!(w, ",{:.9e}", r.mse)?;
        }
        Ok(())
    }
}

/// Gradient descent on `MSE(g(z), target)` with the estimator frozen,
/// starting from `N(0, init_sigma²)` drawn with `init_seed`.
pub fn optimize_latent_to_target(
    est: &EstimatorWeights,
    target: &GeomParams,
    init_seed: u64,
    config: &OptimizeConfig,
) -> Result<(LatentVector, OptimizationTrace)> {
    let init = LatentVector::random(est.latent_dim(), config.init_sigma, init_seed);
    optimize_latent_from(est, target, init, config)
}

/// As [`optimize_latent_to_target`] from an explicit starting latent.
///
/// A step that raises the MSE is rejected and the step size halved; an
/// accepted step grows it by 20%. Only accepted iterates enter the trace,
/// so its MSE column never increases.
pub fn optimize_latent_from(
    est: &EstimatorWeights,
    target: &GeomParams,
    init: LatentVector,
    config: &OptimizeConfig,
) -> Result<(LatentVector, OptimizationTrace)> {
    optimize_latent_observed(est, target, init, config, &mut |_| {})
}

/// Step size below which a rejected step is taken to have crossed a kink of
/// the piecewise-linear estimator rather than overshot a smooth minimum.
const KINK_STEP: f64 = 1e-8;

/// As [`optimize_latent_from`], calling `observe` with each accepted row as
/// soon as it is accepted.
///
/// With a rectified-linear estimator the MSE has creases. When the iterate
/// sits next to one, the gradient of the current piece can point uphill
/// across it and halving alone never recovers. Once the step falls below
/// [`KINK_STEP`] the gradient at the last rejected trial joins a bundle and
/// the search direction becomes the minimum-norm convex combination of the
/// bundle, which descends along the crease. The bundle is cleared after
/// every accepted step. A direction of (near) zero length means no descent
/// direction exists and the search stops.
pub fn optimize_latent_observed(
    est: &EstimatorWeights,
    target: &GeomParams,
    init: LatentVector,
    config: &OptimizeConfig,
    observe: &mut dyn FnMut(&TraceRow),
) -> Result<(LatentVector, OptimizationTrace)> {
    config.validate()?;
    if target.0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("target parameters must be positive and finite"));
    }
    let mut z = init;
    let (mut mse, grad, params) = est.mse_and_grad(&z, target)?;
    let row = |iter, params, mse, z: &LatentVector| TraceRow {
        iter,
        params,
        mse,
        latent: config.record_latents.then(|| z.clone()),
    };
    let mut rows = vec![row(0, params, mse, &z)];
    observe(&rows[0]);
    let max_bundle = z.dim() + 1;
    let mut bundle = vec![grad.clone()];
    let mut dir = grad;
    let mut rejected_grad: Option<Vec<f64>> = None;
    let mut step = config.step_size;
    for iter in 1..=config.max_steps {
        if mse <= config.tolerance {
            break;
        }
        if step < KINK_STEP {
            match rejected_grad.take() {
                Some(g) if bundle.len() < max_bundle => bundle.push(g),
                _ => break,
            }
            dir = min_norm_combination(&bundle);
            if norm(&dir) <= 1e-9 * bundle.iter().map(|g| norm(g)).fold(0.0, f64::max) {
                break;
            }
            step = config.step_size;
        }
        let trial = LatentVector(z.0.iter().zip(&dir).map(|(v, d)| v - step * d).collect());
        let (t_mse, t_grad, t_params) = est.mse_and_grad(&trial, target)?;
        if t_mse.is_finite() && t_mse <= mse {
            z = trial;
            mse = t_mse;
            bundle.clear();
            bundle.push(t_grad.clone());
            dir = t_grad;
            rejected_grad = None;
            step *= 1.2;
            rows.push(row(iter, t_params, mse, &z));
            observe(rows.last().expect("just pushed"));
        } else {
            if t_mse.is_finite() {
                rejected_grad = Some(t_grad);
            }
            step *= 0.5;
        }
    }
    let converged = mse <= config.tolerance;
    Ok((z, OptimizationTrace { rows, converged }))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum-norm point of the convex hull of `vectors`, by Frank-Wolfe with
/// exact line search on `‖Σ λ_i v_i‖²` over the simplex.
fn min_norm_combination(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut x = vectors[0].clone();
    for _ in 0..500 {
        let (best, _) = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot(v, &x)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("bundle is not empty");
        let d: Vec<f64> = vectors[best].iter().zip(&x).map(|(v, xi)| v - xi).collect();
        let dd = dot(&d, &d);
        if dd == 0.0 {
            break;
        }
        let gamma = (-dot(&x, &d) / dd).clamp(0.0, 1.0);
        if gamma == 0.0 {
            break;
        }
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += gamma * di;
        }
    }
    x
}

/// Index and Euclidean distance of the entry closest to `target`.
pub fn nearest_neighbor(entries: &[GeomParams], target: &GeomParams) -> Option<(usize, f64)> {
    entries
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d =
                p.0.iter()
                    .zip(&target.0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
            (i, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}
