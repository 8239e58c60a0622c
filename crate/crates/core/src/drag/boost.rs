//! Least-squares gradient boosting with complete regression trees.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Minimum number of records accepted by [`train_drag_model`].
pub const MIN_DRAG_RECORDS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            trees: 200,
            depth: 3,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.depth > 16 {
            return Err(invalid("need at least one tree and depth at most 16"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning_rate must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Complete binary tree stored level by level. Internal node `i` has
/// children `2i + 1` and `2i + 2`; a sample goes left when
/// `x[feature] <= threshold`. Nodes that could not be split carry an
/// infinite threshold and send everything left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub depth: usize,
    pub features: Vec<u32>,
    pub thresholds: Vec<f64>,
    pub leaves: Vec<f64>,
}

impl RegressionTree {
    fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0;
        for _ in 0..self.depth {
            let go_left = x[self.features[node] as usize] <= self.thresholds[node];
            node = 2 * node + if go_left { 1 } else { 2 };
        }
        node - self.features.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaves[self.leaf_index(x)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragModel {
    pub feature_count: usize,
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl DragModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_count {
            return Err(invalid(format!(
                "expected {} features, got {}",
                self.feature_count,
                x.len()
            )));
        }
        Ok(self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }
}

fn mean_squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Best split of one node along one feature: `(gain, threshold)`.
type Split = Option<(f64, f64)>;

/// Fit `config.trees` trees to `y` on `x`. Also returns the training MSE
/// after each tree.
pub fn fit_boosted(
    x: &[Vec<f64>],
    y: &[f64],
    config: &BoostConfig,
) -> Result<(DragModel, Vec<f64>)> {
    config.validate()?;
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(invalid(
            "features and labels must be non-empty and of equal length",
        ));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(invalid("feature rows must share a positive length"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("features and labels must be finite"));
    }

    let order: Vec<Vec<u32>> = (0..d)
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                x[a as usize][f]
                    .total_cmp(&x[b as usize][f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(config.trees);
    let mut losses = Vec::with_capacity(config.trees);
    for _ in 0..config.trees {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let tree = fit_tree(x, &resid, &order, config.depth);
        for (p, row) in pred.iter_mut().zip(x) {
            *p += config.learning_rate * tree.predict(row);
        }
        losses.push(mean_squared(&pred, y));
        trees.push(tree);
    }
    Ok((
        DragModel {
            feature_count: d,
            base,
            learning_rate: config.learning_rate,
            trees,
        },
        losses,
    ))
}

fn fit_tree(x: &[Vec<f64>], resid: &[f64], order: &[Vec<u32>], depth: usize) -> RegressionTree {
    let n = resid.len();
    let internal = (1usize << depth) - 1;
    let mut features = vec![0u32; internal];
    let mut thresholds = vec![f64::INFINITY; internal];
    // Node of each sample, numbered within the current level.
    let mut node = vec![0usize; n];
    for level in 0..depth {
        let width = 1usize << level;
        let mut sum = vec![0.0; width];
        let mut count = vec![0usize; width];
        for i in 0..n {
            sum[node[i]] += resid[i];
            count[node[i]] += 1;
        }
        let per_feature: Vec<Vec<Split>> = order
            .par_iter()
            .enumerate()
            .map(|(f, idx)| best_splits(x, resid, idx, f, &node, &sum, &count))
            .collect();
        let first = width - 1;
        for k in 0..width {
            let mut best: Option<(f64, u32, f64)> = None;
            for (f, splits) in per_feature.iter().enumerate() {
                if let Some((gain, thr)) = splits[k] {
                    if best.is_none_or(|b| gain > b.0) {
                        best = Some((gain, f as u32, thr));
                    }
                }
            }
            if let Some((_, f, thr)) = best {
                features[first + k] = f;
                thresholds[first + k] = thr;
            }
        }
        for i in 0..n {
            let id = first + node[i];
            let left = x[i][features[id] as usize] <= thresholds[id];
            node[i] = 2 * node[i] + usize::from(!left);
        }
    }
    let mut sum = vec![0.0; 1 << depth];
    let mut count = vec![0usize; 1 << depth];
    for i in 0..n {
        sum[node[i]] += resid[i];
        count[node[i]] += 1;
    }
    let leaves = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    RegressionTree {
        depth,
        features,
        thresholds,
        leaves,
    }
}

/// Scan one presorted feature and return the best split for every node of
/// the level. Gain is the reduction in squared error.
fn best_splits(
    x: &[Vec<f64>],
    resid: &[f64],
    idx: &[u32],
    f: usize,
    node: &[usize],
    sum: &[f64],
    count: &[usize],
) -> Vec<Split> {
    let width = sum.len();
    let mut left_sum = vec![0.0; width];
    let mut left_count = vec![0usize; width];
    let mut last: Vec<Option<f64>> = vec![None; width];
    let mut best: Vec<Split> = vec![None; width];
    for &i in idx {
        let i = i as usize;
        let k = node[i];
        let v = x[i][f];
        if let Some(prev) = last[k] {
            if v > prev {
                let (nl, nr) = (left_count[k] as f64, (count[k] - left_count[k]) as f64);
                let sl = left_sum[k];
                let sr = sum[k] - sl;
                let gain = sl * sl / nl + sr * sr / nr - sum[k] * sum[k] / count[k] as f64;
                if gain > 1e-12 && best[k].is_none_or(|b| gain > b.0) {
                    best[k] = Some((gain, 0.5 * (prev + v)));
                }
            }
        }
        left_sum[k] += resid[i];
        left_count[k] += 1;
        last[k] = Some(v);
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2: f64,
    pub mse: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragMetrics {
    pub train: RegressionMetrics,
    pub validation: RegressionMetrics,
    pub test: RegressionMetrics,
    /// Training MSE after each tree.
    pub train_curve: Vec<f64>,
}

pub fn evaluate_drag(model: &DragModel, x: &[Vec<f64>], y: &[f64]) -> Result<RegressionMetrics> {
    let pred = x
        .iter()
        .map(|r| model.predict(r))
        .collect::<Result<Vec<_>>>()?;
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(RegressionMetrics {
        r2: if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            f64::NAN
        },
        mse: mean_squared(&pred, y),
        count: y.len(),
    })
}

/// Shuffle with `config.seed`, split 0.7/0.15/0.15, fit on the first part
/// and report all three.
pub fn train_drag_model(
    data: &[(Vec<f64>, f64)],
    config: &BoostConfig,
) -> Result<(DragModel, DragMetrics)> {
    if data.len() < MIN_DRAG_RECORDS {
        return Err(invalid(format!(
            "need at least {MIN_DRAG_RECORDS} records, got {}",
            data.len()
        )));
    }
    let first = data[0].1;
    if data.iter().all(|(_, y)| *y == first) {
        return Err(invalid("labels are constant; regression is degenerate"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_train = (data.len() as f64 * 0.7).round() as usize;
    let n_val = (data.len() as f64 * 0.15).round() as usize;
    let split = |range: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        range
            .iter()
            .map(|&i| (data[i].0.clone(), data[i].1))
            .unzip()
    };
    let (xt, yt) = split(&idx[..n_train]);
    let (xv, yv) = split(&idx[n_train..n_train + n_val]);
    let (xs, ys) = split(&idx[n_train + n_val..]);
    let (model, train_curve) = fit_boosted(&xt, &yt, config)?;
    let metrics = DragMetrics {
        train: evaluate_drag(&model, &xt, &yt)?,
        validation: evaluate_drag(&model, &xv, &yv)?,
        test: evaluate_drag(&model, &xs, &ys)?,
        train_curve,
    };
    Ok((model, metrics))
}
