//! Numerical checks of robustness and approximation-error properties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, usage, Error, Result};
use crate::kernels::MeanSpec;
use crate::linalg;
use crate::model_selection::Hyperparams;
use crate::points::Points;
use crate::posterior::{fit, ActionMatrix, ModelKind, PosteriorState};

/// `KL(N(μ₀, Σ₀) ‖ N(μ₁, Σ₁))`.
pub fn gaussian_kl(mu0: &DVector<f64>, cov0: &DMatrix<f64>, mu1: &DVector<f64>, cov1: &DMatrix<f64>) -> Result<f64> {
    let n = mu0.len();
    if mu1.len() != n || cov0.shape() != (n, n) || cov1.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mu1.len(),
        });
    }
    let l1 = linalg::cholesky(cov1.clone(), "second covariance")?;
    let l0 = linalg::cholesky(cov0.clone(), "first covariance")?;
    let a = linalg::solve_lower_mat(&l1, &linalg::lower(&l0));
    let d = linalg::solve_lower(&l1, &(mu1 - mu0));
    let kl = 0.5 * (a.norm_squared() - n as f64 + d.norm_squared() + linalg::log_det(&l1) - linalg::log_det(&l0));
    check_finite(kl, "Gaussian KL")
}

/// Posterior of `f(X)` in whitened coordinates `u = L⁻¹(f − m)` with
/// `K = LLᵀ`: mean `Lᵀṽ`, covariance `I − LᵀC̃L`.
fn whitened_moments(state: &PosteriorState, l: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = l.nrows();
    let mean = l.transpose() * state.v_tilde();
    let mut cov = DMatrix::identity(n, n) - l.transpose() * state.apply_c(l);
    linalg::symmetrize(&mut cov);
    (mean, cov)
}

/// A PIF problem: fixed data, hyperparameters and actions.
#[derive(Clone, Debug)]
pub struct PifSetup<'a> {
    pub model: ModelKind,
    pub x: &'a Points,
    pub y: &'a [f64],
    pub theta: &'a Hyperparams,
    pub mean: &'a MeanSpec,
    pub actions: &'a ActionMatrix,
}

/// Prepared clean posterior, reused across contamination values.
pub struct PifContext<'a> {
    setup: PifSetup<'a>,
    contaminated_theta: Hyperparams,
    l: DMatrix<f64>,
    clean: (DVector<f64>, DMatrix<f64>),
}

impl<'a> PifContext<'a> {
    pub fn new(setup: PifSetup<'a>) -> Result<Self> {
        let clean = fit(setup.model, setup.x, setup.y, setup.theta, setup.mean, setup.actions)?;
        let mut contaminated_theta = setup.theta.clone();
        contaminated_theta.robust.c_override = Some(clean.weighted().c);
        let k = setup.theta.kernel.train_gram(setup.x)?;
        let l = linalg::lower(&linalg::cholesky(k, "K")?);
        let moments = whitened_moments(&clean, &l);
        Ok(Self {
            setup,
            contaminated_theta,
            l,
            clean: moments,
        })
    }

    /// KL between the clean posterior and the one with `y[m] ← y_c`.
    pub fn pif(&self, m_index: usize, y_c: f64) -> Result<f64> {
        let s = &self.setup;
        if m_index >= s.y.len() {
            return usage(format!("index {m_index} out of range for {} points", s.y.len()));
        }
        let mut yc = s.y.to_vec();
        yc[m_index] = y_c;
        let cont = fit(s.model, s.x, &yc, &self.contaminated_theta, s.mean, s.actions)?;
        let (mu1, cov1) = whitened_moments(&cont, &self.l);
        gaussian_kl(&self.clean.0, &self.clean.1, &mu1, &cov1)
    }
}

pub fn pif(setup: PifSetup<'_>, m_index: usize, y_c: f64) -> Result<f64> {
    PifContext::new(setup)?.pif(m_index, y_c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PifCurve {
    pub y_c: Vec<f64>,
    pub pif: Vec<f64>,
    /// Least-squares slope of log PIF against log |y_c − y_m| over the last decade.
    pub slope: f64,
    pub bounded: bool,
}

/// Contaminated values `y_m + 10^(k/7)` for `|Δ|` from 1 to 10⁶.
pub fn default_grid(y_m: f64) -> Vec<f64> {
    (0..=42).map(|k| y_m + 10f64.powf(k as f64 / 7.0)).collect()
}

pub fn pif_curve(setup: PifSetup<'_>, m_index: usize, grid: &[f64]) -> Result<PifCurve> {
    if grid.len() < 2 {
        return usage("PIF grid needs at least two points");
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return usage("PIF grid must be strictly increasing");
    }
    let y_m = *setup
        .y
        .get(m_index)
        .ok_or_else(|| Error::Usage(format!("index {m_index} out of range")))?;
    let ctx = PifContext::new(setup)?;
    let pif: Vec<f64> = grid.iter().map(|&yc| ctx.pif(m_index, yc)).collect::<Result<_>>()?;
    let delta: Vec<f64> = grid.iter().map(|yc| (yc - y_m).abs()).collect();
    let slope = tail_slope(&delta, &pif)?;
    Ok(PifCurve {
        y_c: grid.to_vec(),
        pif,
        slope,
        bounded: slope < 0.1,
    })
}

/// Log-log least-squares slope over points within a decade of the largest `|Δ|`.
pub fn tail_slope(delta: &[f64], values: &[f64]) -> Result<f64> {
    let top = delta.iter().cloned().fold(0.0_f64, f64::max);
    let pts: Vec<(f64, f64)> = delta
        .iter()
        .zip(values)
        .filter(|(d, v)| **d >= top / 10.0 * (1.0 - 1e-12) && **d > 0.0 && **v > 0.0)
        .map(|(d, v)| (d.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return usage("tail slope needs two positive points in the last decade");
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub lhs1: f64,
    pub rhs1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
}

/// RKHS norms of the error representers against the predictive variances.
pub fn worst_case_identity(state: &PosteriorState, x: &[f64]) -> Result<WorstCase> {
    let theta = state.theta();
    let xt = state.x_train();
    let n = xt.len();
    let k = theta.kernel.cross(xt, x)?;
    let kxx = theta.kernel.outputscale();
    let sigma2 = theta.sigma2;

    let mut kt = theta.kernel.train_gram(xt)?;
    for (j, d) in state.noise_diag().iter().enumerate() {
        kt[(j, j)] += d;
    }
    // Gram matrix of k^w on {x} ∪ X.
    let mut g = DMatrix::zeros(n + 1, n + 1);
    g[(0, 0)] = kxx + sigma2;
    for j in 0..n {
        g[(0, j + 1)] = k[j];
        g[(j + 1, 0)] = k[j];
    }
    g.view_mut((1, 1), (n, n)).copy_from(&kt);

    let kcol = DMatrix::from_column_slice(n, 1, k.as_slice());
    let d = state.apply_c(&kcol).column(0).into_owned();
    let mut a = DVector::zeros(n + 1);
    a[0] = 1.0;
    a.rows_mut(1, n).copy_from(&(-&d));
    let lhs1 = a.dot(&(&g * &a));
    let rhs1 = state.predict(x)?.var_total + sigma2;

    let kinv_k = state.apply_ktilde_inv(&kcol)?.column(0).into_owned();
    let d2 = &kinv_k - &d;
    let mut a2 = DVector::zeros(n + 1);
    a2.rows_mut(1, n).copy_from(&d2);
    let lhs2 = a2.dot(&(&g * &a2));
    let rhs2 = k.dot(&d2);
    Ok(WorstCase { lhs1, rhs1, lhs2, rhs2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub i: usize,
    pub lhs: f64,
    pub bound: f64,
    pub rho: f64,
}

/// Distance in the kernel RKHS between the full robust posterior mean and
/// its projected approximations, against the relative-error bound.
pub fn mean_convergence_check(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    sequence: &[ActionMatrix],
) -> Result<Vec<ConvergenceRow>> {
    let full_model = if model.is_robust() { ModelKind::Rcgp } else { ModelKind::ExactGp };
    let full = fit(full_model, x, y, theta, mean, &ActionMatrix::empty(x.len()))?;
    let v_hat = full.v_tilde().clone();
    let k = theta.kernel.train_gram(x)?;
    let noise = full.noise_diag();
    let mut kt = k.clone();
    for (j, d) in noise.iter().enumerate() {
        kt[(j, j)] += d;
    }
    let (lmin_k, _) = linalg::eig_range(&k);
    let lmax_d = noise.iter().cloned().fold(0.0_f64, f64::max);
    let c_j = (1.0 + lmax_d / lmin_k).sqrt();
    let vk = v_hat.dot(&(&k * &v_hat));
    let norm_kt = v_hat.dot(&(&kt * &v_hat)).sqrt();

    let mut rows = Vec::with_capacity(sequence.len());
    for actions in sequence {
        let st = fit(model, x, y, theta, mean, actions)?;
        let diff = &v_hat - st.v_tilde();
        let lhs = diff.dot(&(&k * &diff)).max(0.0).sqrt();
        let rho = if norm_kt > 0.0 {
            let vb = &v_hat / norm_kt;
            let ktv = &kt * &vb;
            let ckv = st.apply_c(&DMatrix::from_column_slice(x.len(), 1, ktv.as_slice()));
            let inner = &vb - ckv.column(0);
            ktv.dot(&inner).max(0.0).sqrt()
        } else {
            0.0
        };
        rows.push(ConvergenceRow {
            i: st.action_count(),
            lhs,
            bound: rho * c_j * vk.max(0.0).sqrt(),
            rho,
        });
    }
    Ok(rows)
}
