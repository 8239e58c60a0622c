//! Regression error measures.

/// Mean squared error over every component of every row.
pub fn mse<R: AsRef<[f64]>>(pred: &[R], truth: &[R]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.as_ref().iter().zip(t.as_ref()) {
            sum += (a - b).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Coefficient of determination per column. Columns whose truth is constant
/// have no variance to explain and are reported as `None`.
pub fn r2_per_column<R: AsRef<[f64]>>(pred: &[R], truth: &[R]) -> Vec<Option<f64>> {
    let Some(first) = truth.first() else {
        return Vec::new();
    };
    let cols = first.as_ref().len();
    let n = truth.len() as f64;
    (0..cols)
        .map(|c| {
            let mean = truth.iter().map(|t| t.as_ref()[c]).sum::<f64>() / n;
            let ss_tot: f64 = truth.iter().map(|t| (t.as_ref()[c] - mean).powi(2)).sum();
            if ss_tot <= 1e-12 * n.max(1.0) * mean.abs().max(1e-12).powi(2).min(1.0)
                || ss_tot == 0.0
            {
                return None;
            }
            let ss_res: f64 = pred
                .iter()
                .zip(truth)
                .map(|(p, t)| (p.as_ref()[c] - t.as_ref()[c]).powi(2))
                .sum();
            Some(1.0 - ss_res / ss_tot)
        })
        .collect()
}

/// Mean R² over the columns that have variance.
pub fn r2<R: AsRef<[f64]>>(pred: &[R], truth: &[R]) -> f64 {
    let cols: Vec<f64> = r2_per_column(pred, truth).into_iter().flatten().collect();
    if cols.is_empty() {
        f64::NAN
    } else {
        cols.iter().sum::<f64>() / cols.len() as f64
    }
}
