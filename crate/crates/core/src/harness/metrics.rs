use crate::error::{usage, Error, Result};
use crate::posterior::PredictiveDist;

pub fn mae(pred_means: &[f64], y_true: &[f64]) -> Result<f64> {
    if pred_means.len() != y_true.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: pred_means.len(),
        });
    }
    if y_true.is_empty() {
        return usage("metrics need at least one point");
    }
    Ok(pred_means.iter().zip(y_true).map(|(m, y)| (m - y).abs()).sum::<f64>() / y_true.len() as f64)
}

/// Mean Gaussian negative log-likelihood of the targets under the predictive
/// distributions, with `noise` added to each latent variance.
pub fn nll(pred: &[PredictiveDist], y_true: &[f64], noise: f64) -> Result<f64> {
    if pred.len() != y_true.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: pred.len(),
        });
    }
    if y_true.is_empty() {
        return usage("metrics need at least one point");
    }
    let mut total = 0.0;
    for (p, y) in pred.iter().zip(y_true) {
        let v = p.var_total + noise;
        if !(v > 0.0) {
            return usage(format!("predictive variance must be positive, got {v}"));
        }
        total += 0.5 * (2.0 * std::f64::consts::PI * v).ln() + (y - p.mean).powi(2) / (2.0 * v);
    }
    Ok(total / y_true.len() as f64)
}
