//! Small statistics helpers: sample moments, binomial errors and dense
//! least squares.

use crate::error::{RcmError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, stderr: f64::NAN, count: 0 };
    }
    if values.iter().all(|v| *v == values[0]) {
        return MeanEstimate { mean: values[0], stderr: 0.0, count: n };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean, stderr, count: n }
}

/// Frequency `hits / trials` with its binomial standard error.
pub fn binomial(hits: u64, trials: u64) -> (f64, f64) {
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Least-squares solution of `X β ≈ y` for a tall design matrix given by
/// columns. Uses modified Gram–Schmidt; returns `(β, residual norm)`.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let k = columns.len();
    let m = y.len();
    if m < k {
        return Err(RcmError::TooFewPoints { needed: k, got: m });
    }
    let mut q: Vec<Vec<f64>> = columns.to_vec();
    let mut r = vec![vec![0.0; k]; k];
    for j in 0..k {
        for i in 0..j {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r[i][j] = dot;
            let qi = q[i].clone();
            for (v, u) in q[j].iter_mut().zip(&qi) {
                *v -= dot * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RcmError::InvalidArgument("rank-deficient design".into()));
        }
        r[j][j] = norm;
        for v in q[j].iter_mut() {
            *v /= norm;
        }
    }
    let qty: Vec<f64> = q.iter().map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r[i][j] * beta[j]).sum();
        beta[i] = (qty[i] - s) / r[i][i];
    }
    let resid = (0..m)
        .map(|row| {
            let fit: f64 = (0..k).map(|j| columns[j][row] * beta[j]).sum();
            (y[row] - fit).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    Ok((beta, resid))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line through `(x, y)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(RcmError::TooFewPoints { needed: 2, got: x.len().min(y.len()) });
    }
    let (beta, _) = least_squares(&[vec![1.0; x.len()], x.to_vec()], y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - beta[0] - beta[1] * a).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    Ok(LinearFit { intercept: beta[0], slope: beta[1], r_squared })
}
