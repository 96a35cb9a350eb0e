//! Fitting and prediction for the exact, robust, computation-aware and
//! robust computation-aware GP posteriors.

mod actions;

use std::ops::Range;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use actions::{build_actions, ActionKind, ActionMatrix, ActionParam};
pub(crate) use actions::Materialized;

use crate::error::{usage, Error, Result};
use crate::kernels::{KernelSpec, MeanSpec};
use crate::linalg::{self, Chol};
use crate::model_selection::Hyperparams;
use crate::points::Points;
use crate::robust::{build_weighted_noise, WeightedNoise};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    ExactGp,
    Rcgp,
    Cagp,
    Rcagp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::ExactGp, ModelKind::Rcgp, ModelKind::Cagp, ModelKind::Rcagp];

    pub fn is_robust(self) -> bool {
        matches!(self, ModelKind::Rcgp | ModelKind::Rcagp)
    }

    pub fn is_computation_aware(self) -> bool {
        matches!(self, ModelKind::Cagp | ModelKind::Rcagp)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ExactGp => "gp",
            ModelKind::Rcgp => "rcgp",
            ModelKind::Cagp => "cagp",
            ModelKind::Rcagp => "rcagp",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gp" | "exactgp" | "exact" => Ok(ModelKind::ExactGp),
            "rcgp" => Ok(ModelKind::Rcgp),
            "cagp" => Ok(ModelKind::Cagp),
            "rcagp" => Ok(ModelKind::Rcagp),
            other => usage(format!("unknown model `{other}`")),
        }
    }
}

/// Predictive distribution of the latent function at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist {
    pub mean: f64,
    pub var_total: f64,
    pub var_math: Option<f64>,
    pub var_comp: Option<f64>,
}

#[derive(Clone, Debug)]
enum Solver {
    Prior,
    Full {
        chol: Chol,
    },
    Projected {
        s: DMatrix<f64>,
        support: Vec<Range<usize>>,
        chol: Chol,
    },
}

/// A fitted posterior. Immutable; predictions may run concurrently.
#[derive(Clone, Debug)]
pub struct PosteriorState {
    model: ModelKind,
    x_train: Points,
    scaled_train: Points,
    y: Vec<f64>,
    theta: Hyperparams,
    mean: MeanSpec,
    weighted: WeightedNoise,
    actions: Option<ActionMatrix>,
    solver: Solver,
    v_tilde: DVector<f64>,
    dense_factor: OnceLock<Chol>,
}

/// Reproducibility record of a fitted state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateExport {
    pub model: ModelKind,
    pub theta: Hyperparams,
    /// `None` when the soft threshold is infinite.
    pub c: Option<f64>,
    pub beta: f64,
    pub actions: Option<ActionMatrix>,
    pub v_tilde: Vec<f64>,
    pub x_train: Points,
}

/// Weights for the given model: robust ones for RCGP/RCaGP, the constant
/// noise-matched weight otherwise.
pub fn model_weights(model: ModelKind, y: &[f64], m: &[f64], theta: &Hyperparams) -> Result<WeightedNoise> {
    if model.is_robust() {
        build_weighted_noise(y, m, theta.sigma2, &theta.robust)
    } else {
        Ok(WeightedNoise::constant(m, theta.sigma2))
    }
}

/// Diagonal of `σ²J_w`.
pub(crate) fn noise_diag(weighted: &WeightedNoise, sigma2: f64) -> Vec<f64> {
    weighted.jw_diag.iter().map(|j| sigma2 * j).collect()
}

/// The pieces of the projected system `SᵀK̃S` shared by fitting and the ELBO.
pub(crate) struct ProjectedSystem {
    pub mat: Materialized,
    /// `K S` with `K` the jittered training Gram matrix.
    pub ks: DMatrix<f64>,
    pub stks: DMatrix<f64>,
    /// `Sᵀ(σ²J_w)S`.
    pub stds: DMatrix<f64>,
    pub chol: Chol,
}

/// `K S` without forming `K`: kernel rows are generated in chunks.
pub(crate) fn kernel_times_actions(
    kernel: &KernelSpec,
    scaled: &Points,
    mat: &Materialized,
    gram: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let n = scaled.len();
    let i = mat.s.ncols();
    if let Some(g) = gram {
        return g * &mat.s;
    }
    let jitter = kernel.jitter();
    let mut ks = DMatrix::zeros(n, i);
    if is_block(mat) {
        let mut col_of = vec![0usize; n];
        for (a, r) in mat.support.iter().enumerate() {
            for l in r.clone() {
                col_of[l] = a;
            }
        }
        let vals: Vec<f64> = (0..n).map(|l| mat.s[(l, col_of[l])]).collect();
        let mut acc = vec![0.0; i];
        for j in 0..n {
            acc.iter_mut().for_each(|v| *v = 0.0);
            let xj = scaled.row(j);
            for l in 0..n {
                let k = if l == j {
                    kernel.outputscale() + jitter
                } else {
                    kernel.eval_scaled(xj, scaled.row(l))
                };
                acc[col_of[l]] += k * vals[l];
            }
            for a in 0..i {
                ks[(j, a)] = acc[a];
            }
        }
        return ks;
    }
    const CHUNK: usize = 128;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let block = DMatrix::from_fn(end - start, n, |r, l| {
            let j = start + r;
            if l == j {
                kernel.outputscale() + jitter
            } else {
                kernel.eval_scaled(scaled.row(j), scaled.row(l))
            }
        });
        ks.rows_mut(start, end - start).copy_from(&(block * &mat.s));
        start = end;
    }
    ks
}

fn is_block(mat: &Materialized) -> bool {
    let n = mat.s.nrows();
    let mut next = 0;
    for r in &mat.support {
        if r.start != next {
            return false;
        }
        next = r.end;
    }
    next == n
}

/// `Sᵀ A` for a tall `A`, using column supports.
pub(crate) fn st_times(mat: &Materialized, a: &DMatrix<f64>) -> DMatrix<f64> {
    let i = mat.s.ncols();
    let mut out = DMatrix::zeros(i, a.ncols());
    for (c, r) in mat.support.iter().enumerate() {
        for b in 0..a.ncols() {
            let mut acc = 0.0;
            for l in r.clone() {
                acc += mat.s[(l, c)] * a[(l, b)];
            }
            out[(c, b)] = acc;
        }
    }
    out
}

pub(crate) fn st_times_vec(s: &DMatrix<f64>, support: &[Range<usize>], v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        s.ncols(),
        support
            .iter()
            .enumerate()
            .map(|(c, r)| r.clone().map(|l| s[(l, c)] * v[l]).sum::<f64>()),
    )
}

pub(crate) fn s_times_vec(s: &DMatrix<f64>, support: &[Range<usize>], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(s.nrows());
    for (c, r) in support.iter().enumerate() {
        for l in r.clone() {
            out[l] += s[(l, c)] * v[c];
        }
    }
    out
}

fn st_diag_s(mat: &Materialized, d: &[f64]) -> DMatrix<f64> {
    let i = mat.s.ncols();
    let mut out = DMatrix::zeros(i, i);
    for a in 0..i {
        for b in 0..=a {
            let lo = mat.support[a].start.max(mat.support[b].start);
            let hi = mat.support[a].end.min(mat.support[b].end);
            let mut acc = 0.0;
            for l in lo..hi {
                acc += mat.s[(l, a)] * d[l] * mat.s[(l, b)];
            }
            out[(a, b)] = acc;
            out[(b, a)] = acc;
        }
    }
    out
}

pub(crate) fn projected_system(
    kernel: &KernelSpec,
    x: &Points,
    scaled: &Points,
    actions: &ActionMatrix,
    noise: &[f64],
    gram: Option<&DMatrix<f64>>,
) -> Result<ProjectedSystem> {
    let mat = actions.materialize(kernel, x)?;
    let ks = kernel_times_actions(kernel, scaled, &mat, gram);
    let mut stks = st_times(&mat, &ks);
    linalg::symmetrize(&mut stks);
    let stds = st_diag_s(&mat, noise);
    let m = &stks + &stds;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projected system".into()));
    }
    let chol = match m.clone().cholesky() {
        Some(c) => c,
        None => {
            return Err(Error::IllConditionedActions {
                condition: linalg::diagonal_condition(&m),
            })
        }
    };
    let condition = linalg::condition_estimate(&chol);
    if !(condition < 1e16) {
        return Err(Error::IllConditionedActions { condition });
    }
    Ok(ProjectedSystem {
        mat,
        ks,
        stks,
        stds,
        chol,
    })
}

/// Fit a posterior. The actions are ignored by the exact models.
pub fn fit(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    actions: &ActionMatrix,
) -> Result<PosteriorState> {
    fit_impl(model, x, y, theta, mean, actions, None)
}

pub(crate) fn fit_impl(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    theta: &Hyperparams,
    mean: &MeanSpec,
    actions: &ActionMatrix,
    gram: Option<&DMatrix<f64>>,
) -> Result<PosteriorState> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    theta.validate()?;
    theta.kernel.check_dim(x.dim())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    let n = x.len();
    let m: Vec<f64> = x.rows().map(|r| mean.eval(r)).collect();
    let weighted = model_weights(model, y, &m, theta)?;
    let scaled_train = theta.kernel.scale(x);
    let resid = DVector::from_iterator(n, y.iter().zip(&weighted.m_w).map(|(a, b)| a - b));
    let noise = noise_diag(&weighted, theta.sigma2);

    let (solver, v_tilde, stored_actions) = if n == 0 {
        (Solver::Prior, DVector::zeros(0), None)
    } else if model.is_computation_aware() {
        if actions.count() == 0 {
            actions.materialize(&theta.kernel, x)?;
            (Solver::Prior, DVector::zeros(n), Some(actions.clone()))
        } else {
            let sys = projected_system(&theta.kernel, x, &scaled_train, actions, &noise, gram)?;
            let rhs = st_times_vec(&sys.mat.s, &sys.mat.support, &resid);
            let v_bar = sys.chol.solve(&rhs);
            let v_tilde = s_times_vec(&sys.mat.s, &sys.mat.support, &v_bar);
            (
                Solver::Projected {
                    s: sys.mat.s,
                    support: sys.mat.support,
                    chol: sys.chol,
                },
                v_tilde,
                Some(actions.clone()),
            )
        }
    } else {
        let mut kt = match gram {
            Some(g) => g.clone(),
            None => theta.kernel.train_gram(x)?,
        };
        for j in 0..n {
            kt[(j, j)] += noise[j];
        }
        let chol = linalg::cholesky(kt, "K + σ²J_w")?;
        let v = chol.solve(&resid);
        (Solver::Full { chol }, v, None)
    };
    if v_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representer weights".into()));
    }
    Ok(PosteriorState {
        model,
        x_train: x.clone(),
        scaled_train,
        y: y.to_vec(),
        theta: theta.clone(),
        mean: mean.clone(),
        weighted,
        actions: stored_actions,
        solver,
        v_tilde,
        dense_factor: OnceLock::new(),
    })
}

impl PosteriorState {
    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn theta(&self) -> &Hyperparams {
        &self.theta
    }

    pub fn mean_spec(&self) -> &MeanSpec {
        &self.mean
    }

    pub fn weighted(&self) -> &WeightedNoise {
        &self.weighted
    }

    pub fn x_train(&self) -> &Points {
        &self.x_train
    }

    pub fn y_train(&self) -> &[f64] {
        &self.y
    }

    pub fn actions(&self) -> Option<&ActionMatrix> {
        self.actions.as_ref()
    }

    /// Number of actions actually used (`n` for the exact models).
    pub fn action_count(&self) -> usize {
        match &self.solver {
            Solver::Prior => 0,
            Solver::Full { .. } => self.x_train.len(),
            Solver::Projected { s, .. } => s.ncols(),
        }
    }

    pub fn v_tilde(&self) -> &DVector<f64> {
        &self.v_tilde
    }

    pub fn n_train(&self) -> usize {
        self.x_train.len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x_train.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.x_train.dim(),
                got: x.len(),
            });
        }
        self.theta.kernel.check_dim(x.len())
    }

    fn k_x(&self, x: &[f64]) -> DVector<f64> {
        let sx: Vec<f64> = if self.theta.kernel.is_ard() {
            x.iter()
                .zip(self.theta.kernel.lengthscales())
                .map(|(v, l)| v / l)
                .collect()
        } else {
            let l = self.theta.kernel.lengthscales()[0];
            x.iter().map(|v| v / l).collect()
        };
        DVector::from_iterator(
            self.scaled_train.len(),
            self.scaled_train.rows().map(|r| self.theta.kernel.eval_scaled(r, &sx)),
        )
    }

    /// `kᵀC̃k` for a cross-covariance column.
    fn quad_c(&self, k: &DVector<f64>) -> f64 {
        match &self.solver {
            Solver::Prior => 0.0,
            Solver::Full { chol } => linalg::solve_lower(chol, k).norm_squared(),
            Solver::Projected { s, support, chol } => {
                let u = st_times_vec(s, support, k);
                linalg::solve_lower(chol, &u).norm_squared()
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictiveDist> {
        self.check_point(x)?;
        let k = self.k_x(x);
        let kxx = self.theta.kernel.outputscale();
        let mean = self.mean.eval(x) + k.dot(&self.v_tilde);
        let var_total = (kxx - self.quad_c(&k)).max(0.0);
        Ok(PredictiveDist {
            mean,
            var_total,
            var_math: None,
            var_comp: None,
        })
    }

    pub fn predict_many(&self, xs: &Points) -> Result<Vec<PredictiveDist>> {
        xs.rows().map(|x| self.predict(x)).collect()
    }

    /// Cholesky factor of the dense `K̃ = K + σ²J_w`; built once on demand.
    fn dense_factor(&self) -> Result<&Chol> {
        if let Some(c) = self.dense_factor.get() {
            return Ok(c);
        }
        let mut kt = self.theta.kernel.train_gram(&self.x_train)?;
        let noise = noise_diag(&self.weighted, self.theta.sigma2);
        for (j, d) in noise.iter().enumerate() {
            kt[(j, j)] += d;
        }
        let chol = linalg::cholesky(kt, "K + σ²J_w")?;
        Ok(self.dense_factor.get_or_init(|| chol))
    }

    /// `(k − kᵀK̃⁻¹k, kᵀ(K̃⁻¹ − C̃)k)`. Uses a dense `O(n³)` factorization.
    pub fn variance_decomposition(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let k = self.k_x(x);
        let kxx = self.theta.kernel.outputscale();
        if self.x_train.is_empty() {
            return Ok((kxx, 0.0));
        }
        let q_full = linalg::solve_lower(self.dense_factor()?, &k).norm_squared();
        let q_c = self.quad_c(&k);
        Ok((kxx - q_full, q_full - q_c))
    }

    pub fn predict_with_diagnostics(&self, x: &[f64]) -> Result<PredictiveDist> {
        let mut p = self.predict(x)?;
        let (math, comp) = self.variance_decomposition(x)?;
        p.var_math = Some(math);
        p.var_comp = Some(comp);
        Ok(p)
    }

    /// Joint predictive mean and covariance of `f` at several points.
    pub fn joint_predictive(&self, xs: &Points) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = xs.len();
        for x in xs.rows() {
            self.check_point(x)?;
        }
        let n = self.x_train.len();
        let mut kxq = DMatrix::zeros(n, q);
        for (c, x) in xs.rows().enumerate() {
            kxq.set_column(c, &self.k_x(x));
        }
        let mut cov = self.theta.kernel.gram_sym(xs)?;
        let mean = DVector::from_iterator(
            q,
            xs.rows()
                .enumerate()
                .map(|(c, x)| self.mean.eval(x) + kxq.column(c).dot(&self.v_tilde)),
        );
        let u = match &self.solver {
            Solver::Prior => None,
            Solver::Full { chol } => Some(linalg::solve_lower_mat(chol, &kxq)),
            Solver::Projected { s, support, chol } => {
                let mat = Materialized {
                    s: s.clone(),
                    support: support.clone(),
                };
                Some(linalg::solve_lower_mat(chol, &st_times(&mat, &kxq)))
            }
        };
        if let Some(u) = u {
            cov -= u.transpose() * u;
        }
        linalg::symmetrize(&mut cov);
        Ok((mean, cov))
    }

    /// `C̃ V` for a block of columns.
    pub fn apply_c(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.solver {
            Solver::Prior => DMatrix::zeros(v.nrows(), v.ncols()),
            Solver::Full { chol } => chol.solve(v),
            Solver::Projected { s, support, chol } => {
                let mat = Materialized {
                    s: s.clone(),
                    support: support.clone(),
                };
                s * chol.solve(&st_times(&mat, v))
            }
        }
    }

    /// `K̃⁻¹ V` by the dense factorization.
    pub fn apply_ktilde_inv(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.dense_factor()?.solve(v))
    }

    /// Diagonal of `σ²J_w`.
    pub fn noise_diag(&self) -> Vec<f64> {
        noise_diag(&self.weighted, self.theta.sigma2)
    }

    pub fn export(&self) -> StateExport {
        StateExport {
            model: self.model,
            theta: self.theta.clone(),
            c: self.weighted.c.is_finite().then_some(self.weighted.c),
            beta: self.weighted.beta,
            actions: self.actions.clone(),
            v_tilde: self.v_tilde.iter().copied().collect(),
            x_train: self.x_train.clone(),
        }
    }

    pub fn export_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }
}
