//! Outlier down-weighting for the generalized-Bayes GP update.
//!
//! Observations are weighted by an inverse-multiquadric function of their
//! residual to the prior mean. The weight inflates the effective noise of a
//! point through `J_w = diag(σ²/(2w²))` and shifts its target through the
//! shrinkage mean `m_w = m + σ² ∂_y log w²`.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Floor for the soft threshold when every residual is zero.
pub const C_FLOOR: f64 = 1e-6;

/// How the weight scale β is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LearningRate {
    /// β = σ/√2, under which a constant weight gives `J_w = I`.
    NoiseMatched,
    Fixed(f64),
}

impl LearningRate {
    pub fn resolve(self, sigma2: f64) -> f64 {
        match self {
            LearningRate::NoiseMatched => (sigma2 / 2.0).sqrt(),
            LearningRate::Fixed(b) => b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub beta: LearningRate,
    /// Fraction of points treated as potential outliers; `c` is the
    /// `(1 − ε)`-quantile of the absolute residuals.
    pub epsilon: f64,
    /// Fixed soft threshold. `f64::INFINITY` switches robustness off.
    pub c_override: Option<f64>,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            beta: LearningRate::NoiseMatched,
            epsilon: 0.2,
            c_override: None,
        }
    }
}

impl RobustConfig {
    /// β = 1, ε = 0.2.
    pub fn paper_defaults() -> Self {
        Self {
            beta: LearningRate::Fixed(1.0),
            epsilon: 0.2,
            c_override: None,
        }
    }

    /// Constant weight σ/√2 everywhere: recovers the non-robust model.
    pub fn non_robust() -> Self {
        Self {
            beta: LearningRate::NoiseMatched,
            epsilon: 0.2,
            c_override: Some(f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return usage(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if let LearningRate::Fixed(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return usage(format!("beta must be positive, got {b}"));
            }
        }
        if let Some(c) = self.c_override {
            if !(c > 0.0) {
                return usage(format!("soft threshold must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Per-point weights and the quantities derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedNoise {
    pub w: Vec<f64>,
    /// Diagonal of `J_w`, i.e. `σ²/(2wⱼ²)`.
    pub jw_diag: Vec<f64>,
    pub m_w: Vec<f64>,
    pub c: f64,
    pub beta: f64,
}

impl WeightedNoise {
    /// The non-robust case: `w ≡ σ/√2`, `J_w = I`, `m_w = m`.
    pub fn constant(m: &[f64], sigma2: f64) -> Self {
        let beta = (sigma2 / 2.0).sqrt();
        Self {
            w: vec![beta; m.len()],
            jw_diag: vec![1.0; m.len()],
            m_w: m.to_vec(),
            c: f64::INFINITY,
            beta,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Empirical `(1 − ε)`-quantile of the absolute residuals (linear
/// interpolation between order statistics).
pub fn soft_threshold(residuals: &[f64], epsilon: f64) -> Result<f64> {
    if residuals.is_empty() {
        return usage("soft threshold needs at least one residual");
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return usage(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    if abs.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("residuals".into()));
    }
    abs.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let q = quantile_sorted(&abs, 1.0 - epsilon);
    Ok(if q > 0.0 { q } else { C_FLOOR })
}

/// Type-7 quantile of an ascending slice.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `β (1 + (y − m)²/c²)^{-1/2}`.
pub fn weight(y: f64, m_x: f64, beta: f64, c: f64) -> f64 {
    let r = (y - m_x) / c;
    beta / (1.0 + r * r).sqrt()
}

/// `m − 2σ²(y − m)/(c² + (y − m)²)`, the closed form of `m + σ² ∂_y log w²`.
pub fn shrinkage_mean(m_x: f64, y: f64, sigma2: f64, c: f64) -> f64 {
    let r = y - m_x;
    if c.is_infinite() {
        return m_x;
    }
    m_x - 2.0 * sigma2 * r / (c * c + r * r)
}

/// `∂(r w²)/∂r` for residual `r = y − m`.
pub fn d_residual_weight_sq(r: f64, beta: f64, c: f64) -> f64 {
    if c.is_infinite() {
        return beta * beta;
    }
    let u = r * r / (c * c);
    beta * beta * (1.0 - u) / ((1.0 + u) * (1.0 + u))
}

pub fn build_weighted_noise(
    y: &[f64],
    m: &[f64],
    sigma2: f64,
    cfg: &RobustConfig,
) -> Result<WeightedNoise> {
    if y.len() != m.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: m.len(),
        });
    }
    cfg.validate()?;
    let beta = cfg.beta.resolve(sigma2);
    let residuals: Vec<f64> = y.iter().zip(m).map(|(a, b)| a - b).collect();
    let c = match cfg.c_override {
        Some(c) => c,
        None if y.is_empty() => f64::INFINITY,
        None => soft_threshold(&residuals, cfg.epsilon)?,
    };
    let w: Vec<f64> = y.iter().zip(m).map(|(&yj, &mj)| weight(yj, mj, beta, c)).collect();
    let jw_diag = w.iter().map(|wj| sigma2 / (2.0 * wj * wj)).collect();
    let m_w = y
        .iter()
        .zip(m)
        .map(|(&yj, &mj)| shrinkage_mean(mj, yj, sigma2, c))
        .collect();
    Ok(WeightedNoise {
        w,
        jw_diag,
        m_w,
        c,
        beta,
    })
}
