use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::kernels::MeanSpec;
use crate::linalg;
use crate::model_selection::Hyperparams;
use crate::points::Points;
use crate::posterior::{
    model_weights, noise_diag, projected_system, ActionMatrix, Materialized, ModelKind, ProjectedSystem,
};
use crate::robust::{d_residual_weight_sq, WeightedNoise};

/// Which data-only constant closes the expected pseudo-log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstantTerm {
    /// `C = σ⁻²Σ rⱼ²wⱼ² − 2Σ ∂(rⱼwⱼ²)/∂rⱼ` with `r = y − m`.
    Literal,
    /// `C = Σ (yⱼ − m_wⱼ)²/(σ²Jⱼ) + Σ log(2πσ²Jⱼ)`, which turns the expected
    /// loss into `E_q log N(y − m_w | f − m, σ²J_w)`.
    #[default]
    GaussianNormalized,
}

impl std::str::FromStr for ConstantTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ConstantTerm::Literal),
            "gaussian" | "gaussian_normalized" => Ok(ConstantTerm::GaussianNormalized),
            other => Err(Error::Usage(format!("unknown constant term `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub expected_loss: f64,
    pub kl: f64,
    pub total: f64,
}

impl ElboBreakdown {
    fn new(expected_loss: f64, kl: f64) -> Result<Self> {
        check_finite(expected_loss, "expected loss")?;
        check_finite(kl, "KL divergence")?;
        Ok(Self {
            expected_loss,
            kl,
            total: expected_loss - kl,
        })
    }
}

pub fn constant_term(kind: ConstantTerm, y: &[f64], m: &[f64], weighted: &WeightedNoise, sigma2: f64) -> f64 {
    match kind {
        ConstantTerm::Literal => {
            let mut c = 0.0;
            for j in 0..y.len() {
                let r = y[j] - m[j];
                let w2 = weighted.w[j] * weighted.w[j];
                c += r * r * w2 / sigma2 - 2.0 * d_residual_weight_sq(r, weighted.beta, weighted.c);
            }
            c
        }
        ConstantTerm::GaussianNormalized => {
            let mut c = 0.0;
            for j in 0..y.len() {
                let d = sigma2 * weighted.jw_diag[j];
                let r = y[j] - weighted.m_w[j];
                c += r * r / d + (2.0 * std::f64::consts::PI * d).ln();
            }
            c
        }
    }
}

/// Everything the ELBO and its action gradient need.
pub(crate) struct ElboState {
    pub sys: ProjectedSystem,
    pub noise: Vec<f64>,
    /// `y − m_w`.
    pub resid: DVector<f64>,
    pub v_bar: DVector<f64>,
    pub breakdown: ElboBreakdown,
}

/// Action set used by the ELBO: the exact models use the identity.
fn effective_actions(model: ModelKind, n: usize, actions: &ActionMatrix) -> std::borrow::Cow<'_, ActionMatrix> {
    if model.is_computation_aware() {
        std::borrow::Cow::Borrowed(actions)
    } else {
        std::borrow::Cow::Owned(ActionMatrix::identity(n))
    }
}

/// The closed-form ELBO of the (robust) computation-aware posterior.
pub fn elbo(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    actions: &ActionMatrix,
    constant: ConstantTerm,
) -> Result<ElboBreakdown> {
    Ok(elbo_state(model, x, y, theta, mean, actions, constant, None)?.breakdown)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn elbo_state(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    actions: &ActionMatrix,
    constant: ConstantTerm,
    gram: Option<&DMatrix<f64>>,
) -> Result<ElboState> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Usage("the ELBO needs at least one observation".into()));
    }
    theta.validate()?;
    theta.kernel.check_dim(x.dim())?;
    let n = x.len();
    let m: Vec<f64> = x.rows().map(|r| mean.eval(r)).collect();
    let weighted = model_weights(model, y, &m, theta)?;
    let noise = noise_diag(&weighted, theta.sigma2);
    let scaled = theta.kernel.scale(x);
    let acts = effective_actions(model, n, actions);
    if acts.count() == 0 {
        return Err(Error::Usage("the ELBO needs at least one action".into()));
    }
    let sys = projected_system(&theta.kernel, x, &scaled, &acts, &noise, gram)?;
    let resid = DVector::from_iterator(n, y.iter().zip(&weighted.m_w).map(|(a, b)| a - b));
    let b = crate::posterior::st_times_vec(&sys.mat.s, &sys.mat.support, &resid);
    let v_bar = sys.chol.solve(&b);

    // Posterior moments of f − m at the training inputs.
    let f_bar = &sys.ks * &v_bar;
    let w = linalg::solve_lower_mat(&sys.chol, &sys.ks.transpose());
    let k_diag = theta.kernel.outputscale() + theta.kernel.jitter();
    let mut expected = 0.0;
    for j in 0..n {
        let a = 1.0 / noise[j];
        let khat = k_diag - w.column(j).norm_squared();
        let nu = a * resid[j];
        expected += -0.5 * a * khat - 0.5 * a * f_bar[j] * f_bar[j] + f_bar[j] * nu;
    }
    expected -= 0.5 * constant_term(constant, y, &m, &weighted, theta.sigma2);

    let quad = v_bar.dot(&(&sys.stks * &v_bar));
    check_finite(quad, "KL quadratic term")?;
    let logdet_m = linalg::log_det(&sys.chol);
    let q_chol = linalg::cholesky(sys.stds.clone(), "SᵀJ_wS").map_err(|_| Error::IllConditionedActions {
        condition: linalg::diagonal_condition(&sys.stds),
    })?;
    let logdet_q = linalg::log_det(&q_chol);
    let trace = sys.chol.solve(&sys.stks).trace();
    check_finite(trace, "KL trace term")?;
    let kl = 0.5 * (quad + logdet_m - logdet_q - trace);

    Ok(ElboState {
        breakdown: ElboBreakdown::new(expected, kl)?,
        sys,
        noise,
        resid,
        v_bar,
    })
}

/// The kernel matrix (jittered) applied to a tall matrix, either from a cached
/// Gram matrix or by streaming kernel rows.
pub(crate) fn k_times(
    theta: &Hyperparams,
    x: &Points,
    a: &DMatrix<f64>,
    gram: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    if let Some(g) = gram {
        return g * a;
    }
    let mat = Materialized {
        s: a.clone(),
        support: vec![0..a.nrows(); a.ncols()],
    };
    crate::posterior::kernel_times_actions(&theta.kernel, &theta.kernel.scale(x), &mat, None)
}

/// Gradient of the ELBO total with respect to every entry of the dense
/// action matrix `S` (the constant term does not depend on `S`).
pub(crate) fn elbo_action_gradient(
    st: &ElboState,
    theta: &Hyperparams,
    x: &Points,
    gram: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let s = &st.sys.mat.s;
    let y_ks = &st.sys.ks;
    let n = s.nrows();
    let minv = st.sys.chol.inverse();
    let a = DVector::from_iterator(n, st.noise.iter().map(|d| 1.0 / d));
    let v = &st.v_bar;
    let r = &st.resid;
    let f_bar = y_ks * v;

    // Everything of the form K·(…) and K̃·(…) = K·(…) + D·(…) is gathered
    // so that a single product with K is needed.
    let ay = DMatrix::from_fn(n, y_ks.ncols(), |j, c| a[j] * y_ks[(j, c)]);
    let ay_minv = &ay * &minv;
    let z = &minv * y_ks.transpose() * &ay * &minv;
    let g = DVector::from_iterator(n, (0..n).map(|j| a[j] * (r[j] - f_bar[j])));
    let h = &minv * (y_ks.transpose() * &g);
    let p = &st.sys.stks * v;
    let e = &minv * &p;
    let pm = &minv * &st.sys.stks * &minv;
    let q_inv = linalg::cholesky(st.sys.stds.clone(), "SᵀJ_wS")
        .map(|c| c.inverse())
        .unwrap_or_else(|_| DMatrix::zeros(s.ncols(), s.ncols()));

    // Coefficients of K·X (plain K terms) and K̃·S·B (split into K·S·B + D·S·B).
    let vt = v.transpose();
    let mut k_arg = &ay_minv + &g * &vt;
    let mut kt_b = -&z - (v * h.transpose() + &h * &vt);
    // KL gradient pieces, subtracted.
    k_arg -= &(s * (v * &vt));
    kt_b += v * e.transpose() + &e * &vt;
    kt_b -= &minv;
    k_arg += &(s * &minv);
    kt_b -= &pm;

    let mut plain = r * h.transpose() - r * e.transpose();
    let sb = s * &kt_b;
    let combined = &k_arg + &sb;
    let k_part = k_times(theta, x, &combined, gram);
    plain += &k_part;
    for j in 0..n {
        let d = st.noise[j];
        for c in 0..s.ncols() {
            plain[(j, c)] += d * sb[(j, c)];
        }
    }
    // −∇(−½ logdet SᵀDS) = +D S Q⁻¹
    let sq = s * &q_inv;
    for j in 0..n {
        let d = st.noise[j];
        for c in 0..s.ncols() {
            plain[(j, c)] += d * sq[(j, c)];
        }
    }
    plain
}

/// Extract the gradient entries for the stored values of a trainable action
/// matrix from a dense gradient.
pub(crate) fn restrict_action_gradient(actions: &ActionMatrix, dense: &DMatrix<f64>) -> Vec<f64> {
    match actions {
        ActionMatrix::InducingKernel { .. } => Vec::new(),
        ActionMatrix::SparseBlock { bounds, values } => {
            let mut out = vec![0.0; values.len()];
            for a in 0..bounds.len() - 1 {
                for l in bounds[a]..bounds[a + 1] {
                    out[l] = dense[(l, a)];
                }
            }
            out
        }
        ActionMatrix::Dense { .. } => dense.as_slice().to_vec(),
    }
}

/// Central finite-difference gradient with step `1e-4·(1 + |pₖ|)`.
pub fn fd_gradient<F>(f: F, p: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    fd_gradient_with_step(f, p, 1e-4)
}

pub fn fd_gradient_with_step<F>(f: F, p: &[f64], rel: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let h = rel * (1.0 + p[k].abs());
        probe[k] = p[k] + h;
        let up = f(&probe)?;
        probe[k] = p[k] - h;
        let down = f(&probe)?;
        probe[k] = p[k];
        grad.push(check_finite((up - down) / (2.0 * h), "finite-difference gradient")?);
    }
    Ok(grad)
}

/// Finite-difference gradient of the ELBO total over the unconstrained
/// hyperparameters, followed by the action values when `include_actions`
/// and the actions are trainable.
#[allow(clippy::too_many_arguments)]
pub fn elbo_grad(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    actions: &ActionMatrix,
    constant: ConstantTerm,
    include_actions: bool,
) -> Result<Vec<f64>> {
    let p = theta.to_unconstrained();
    let mut grad = fd_gradient(
        |q| {
            let th = theta.from_unconstrained(q)?;
            Ok(elbo(model, x, y, &th, mean, actions, constant)?.total)
        },
        &p,
    )?;
    if include_actions && actions.trainable() && model.is_computation_aware() {
        let vals = actions.values();
        grad.extend(fd_gradient(
            |q| {
                let mut a = actions.clone();
                a.set_values(q)?;
                Ok(elbo(model, x, y, theta, mean, &a, constant)?.total)
            },
            &vals,
        )?);
    }
    Ok(grad)
}

/// Analytic gradient of the ELBO total over the stored action values.
pub fn elbo_action_grad(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    actions: &ActionMatrix,
    constant: ConstantTerm,
) -> Result<Vec<f64>> {
    if !model.is_computation_aware() || !actions.trainable() {
        return Ok(Vec::new());
    }
    let st = elbo_state(model, x, y, theta, mean, actions, constant, None)?;
    let dense = elbo_action_gradient(&st, theta, x, None);
    Ok(restrict_action_gradient(actions, &dense))
}
