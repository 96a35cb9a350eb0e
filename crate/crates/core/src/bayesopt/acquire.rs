use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayesopt::utility::{mc_log_utility, sorted_batch, BaseSamples, UtilityEval};
use crate::error::{usage, Result};
use crate::kernels::MeanSpec;
use crate::model_selection::elbo::{elbo_action_gradient, elbo_state, restrict_action_gradient, ElboState};
use crate::model_selection::{fd_gradient, Adam, ConstantTerm, Hyperparams};
use crate::points::Points;
use crate::posterior::{s_times_vec, st_times, ActionMatrix, ModelKind};

/// Settings of the joint query/model ascent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcqConfig {
    pub q: usize,
    pub mc_samples: usize,
    pub constant: ConstantTerm,
    /// Adam step for the (reparameterized) query points in the joint stage.
    pub x_lr: f64,
    /// Adam step for θ and the action values.
    pub model_lr: f64,
    pub joint_iters: usize,
    /// Random starts kept after screening.
    pub starts: usize,
    /// Random batches scored before the starts are chosen.
    pub screen: usize,
    /// Query-only ascent before the joint stage.
    pub refine_iters: usize,
    pub refine_lr: f64,
    /// Std of the perturbation of the best observed point (unit box).
    pub perturb: f64,
    /// Move θ and S jointly with the query; otherwise they stay frozen.
    pub optimize_model: bool,
}

impl Default for AcqConfig {
    fn default() -> Self {
        Self {
            q: 1,
            mc_samples: 64,
            constant: ConstantTerm::default(),
            x_lr: 0.001,
            model_lr: 0.01,
            joint_iters: 30,
            starts: 4,
            screen: 256,
            refine_iters: 40,
            refine_lr: 0.05,
            perturb: 0.05,
            optimize_model: true,
        }
    }
}

impl AcqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return usage("batch size q must be at least 1");
        }
        if self.mc_samples == 0 {
            return usage("at least one Monte-Carlo sample is required");
        }
        if !(self.x_lr > 0.0 && self.model_lr > 0.0 && self.refine_lr > 0.0) {
            return usage("step sizes must be positive");
        }
        Ok(())
    }
}

/// Data seen by the surrogate, in the unit box and in the maximization sense.
#[derive(Clone, Copy, Debug)]
pub struct BoProblem<'a> {
    pub model: ModelKind,
    pub x: &'a Points,
    pub y: &'a [f64],
    pub mean: &'a MeanSpec,
    pub y_star: f64,
}

#[derive(Clone, Debug)]
pub struct Proposal {
    /// Batch in the unit box.
    pub xq: Points,
    pub theta: Hyperparams,
    pub actions: ActionMatrix,
    pub eulbo: f64,
    /// Set when every start failed and the batch is random.
    pub fallback: bool,
}

/// Query-side pieces of the predictive distribution, in sorted batch order.
struct QueryMoments {
    kq: DMatrix<f64>,
    t: DMatrix<f64>,
    util: UtilityEval,
}

fn query_moments(
    p: &BoProblem,
    st: &ElboState,
    theta: &Hyperparams,
    xq: &Points,
    base: &BaseSamples,
    with_grad: bool,
) -> Result<QueryMoments> {
    let (sorted, _) = sorted_batch(xq);
    let kq = theta.kernel.gram(p.x, &sorted)?;
    let a = st_times(&st.sys.mat, &kq);
    let t = st.sys.chol.solve(&a);
    let sv = s_times_vec(&st.sys.mat.s, &st.sys.mat.support, &st.v_bar);
    let mu = DVector::from_iterator(
        sorted.len(),
        sorted.rows().enumerate().map(|(c, r)| p.mean.eval(r) + kq.column(c).dot(&sv)),
    );
    let mut cov = theta.kernel.gram_sym(&sorted)? - a.transpose() * &t;
    crate::linalg::symmetrize(&mut cov);
    let util = mc_log_utility(&mu, &cov, p.y_star, base, with_grad)?;
    Ok(QueryMoments { kq, t, util })
}

fn effective_actions(model: ModelKind, n: usize, actions: &ActionMatrix) -> ActionMatrix {
    if model.is_computation_aware() {
        actions.clone()
    } else {
        ActionMatrix::identity(n)
    }
}

fn eulbo_parts(
    p: &BoProblem,
    theta: &Hyperparams,
    actions: &ActionMatrix,
    xq: &Points,
    base: &BaseSamples,
    constant: ConstantTerm,
    gram: Option<&DMatrix<f64>>,
    with_grad: bool,
) -> Result<(ElboState, QueryMoments)> {
    let acts = effective_actions(p.model, p.x.len(), actions);
    let st = elbo_state(p.model, p.x, p.y, theta, p.mean, &acts, constant, gram)?;
    let qm = query_moments(p, &st, theta, xq, base, with_grad)?;
    Ok((st, qm))
}

/// ELBO plus the Monte-Carlo expected log utility of the batch `xq`.
pub fn eulbo(
    p: &BoProblem,
    theta: &Hyperparams,
    actions: &ActionMatrix,
    xq: &Points,
    cfg: &AcqConfig,
    mc_seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let base = BaseSamples::new(cfg.mc_samples, xq.len(), mc_seed)?;
    let (st, qm) = eulbo_parts(p, theta, actions, xq, &base, cfg.constant, None, false)?;
    Ok(st.breakdown.total + qm.util.value)
}

/// Gradient of the utility with respect to the dense action matrix, chained
/// through the predictive mean and covariance of the batch.
fn utility_action_gradient(st: &ElboState, qm: &QueryMoments) -> DMatrix<f64> {
    let s = &st.sys.mat.s;
    let mut kts = st.sys.ks.clone();
    for j in 0..kts.nrows() {
        for c in 0..kts.ncols() {
            kts[(j, c)] += st.noise[j] * s[(j, c)];
        }
    }
    let g_mu = &qm.util.d_mean;
    let g = &qm.util.d_cov;
    let v = &st.v_bar;
    let h = &qm.t * g_mu;
    let ktsv = &kts * v;
    let ktsh = &kts * &h;
    let mut grad = &qm.kq * g_mu * v.transpose() + &st.resid * h.transpose() - ktsv * h.transpose() - ktsh * v.transpose();
    let tg = &qm.t * g;
    grad -= 2.0 * &qm.kq * tg.transpose();
    grad += 2.0 * kts * (&tg * qm.t.transpose());
    grad
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(x: f64) -> f64 {
    let x = x.clamp(1e-6, 1.0 - 1e-6);
    (x / (1.0 - x)).ln()
}

fn batch_from(z: &[f64], d: usize) -> Points {
    Points::new(z.iter().map(|v| sigmoid(*v)).collect(), d).expect("whole rows")
}

/// Gradient of the utility with respect to the unconstrained batch
/// coordinates, by central differences in the box.
fn utility_z_gradient(
    p: &BoProblem,
    st: &ElboState,
    theta: &Hyperparams,
    z: &[f64],
    d: usize,
    base: &BaseSamples,
) -> Result<Vec<f64>> {
    let x: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
    let mut out = vec![0.0; z.len()];
    let h = 1e-5;
    for k in 0..z.len() {
        let mut up = x.clone();
        up[k] += h;
        let mut dn = x.clone();
        dn[k] -= h;
        let fu = query_moments(p, st, theta, &Points::new(up, d)?, base, false)?.util.value;
        let fd = query_moments(p, st, theta, &Points::new(dn, d)?, base, false)?.util.value;
        out[k] = (fu - fd) / (2.0 * h) * x[k] * (1.0 - x[k]);
    }
    Ok(out)
}

fn random_batch<R: Rng + ?Sized>(rng: &mut R, q: usize, d: usize) -> Points {
    Points::new((0..q * d).map(|_| rng.random::<f64>()).collect(), d).expect("whole rows")
}

/// Utility-only ascent of one start with θ and S frozen.
fn refine(
    p: &BoProblem,
    st: &ElboState,
    theta: &Hyperparams,
    start: &Points,
    base: &BaseSamples,
    iters: usize,
    lr: f64,
) -> Result<(Vec<f64>, f64)> {
    let d = start.dim();
    let mut z: Vec<f64> = start.as_slice().iter().map(|v| logit(*v)).collect();
    let mut best_val = query_moments(p, st, theta, &batch_from(&z, d), base, false)?.util.value;
    let mut best_z = z.clone();
    let mut adam = Adam::new(z.len());
    let lrs = vec![lr; z.len()];
    for _ in 0..iters {
        let g = match utility_z_gradient(p, st, theta, &z, d, base) {
            Ok(g) => g,
            Err(_) => break,
        };
        adam.ascend(&mut z, &g, &lrs);
        match query_moments(p, st, theta, &batch_from(&z, d), base, false) {
            Ok(qm) if qm.util.value > best_val => {
                best_val = qm.util.value;
                best_z = z.clone();
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    Ok((best_z, best_val))
}

/// Joint maximization of the EULBO over the batch, θ and the trainable action
/// values, warm-started from `theta`/`actions`.
pub fn propose_batch<R: Rng + ?Sized>(
    p: &BoProblem,
    theta: &Hyperparams,
    actions: &ActionMatrix,
    cfg: &AcqConfig,
    rng: &mut R,
    mc_seed: u64,
) -> Result<Proposal> {
    cfg.validate()?;
    let d = p.x.dim();
    let q = cfg.q;
    let base = BaseSamples::new(cfg.mc_samples, q, mc_seed)?;
    let fallback = |rng: &mut R| Proposal {
        xq: random_batch(rng, q, d),
        theta: theta.clone(),
        actions: actions.clone(),
        eulbo: f64::NAN,
        fallback: true,
    };

    let gram = theta.kernel.train_gram(p.x)?;
    let st0 = match eulbo_parts(p, theta, actions, &random_batch(rng, q, d), &base, cfg.constant, Some(&gram), false) {
        Ok((st, _)) => st,
        Err(e) => {
            debug!("warm model failed ({e}); proposing a random batch");
            return Ok(fallback(rng));
        }
    };

    // Screen random batches, keep the best few, add a perturbed incumbent.
    let mut scored: Vec<(f64, Points)> = (0..cfg.screen.max(cfg.starts))
        .map(|_| random_batch(rng, q, d))
        .filter_map(|b| query_moments(p, &st0, theta, &b, &base, false).ok().map(|m| (m.util.value, b)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut starts: Vec<Points> = scored.into_iter().take(cfg.starts).map(|(_, b)| b).collect();
    if let Some(best) = (0..p.y.len()).max_by(|&a, &b| p.y[a].total_cmp(&p.y[b])) {
        let noise = Normal::new(0.0, cfg.perturb.max(1e-12)).expect("positive std");
        let mut b = random_batch(rng, q, d);
        for (k, v) in b.row_mut(0).iter_mut().enumerate() {
            *v = (p.x.row(best)[k] + noise.sample(rng)).clamp(0.0, 1.0);
        }
        starts.push(b);
    }

    let mut best_start: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        match refine(p, &st0, theta, s, &base, cfg.refine_iters, cfg.refine_lr) {
            Ok((z, v)) if best_start.as_ref().is_none_or(|b| v > b.1) => best_start = Some((z, v)),
            Ok(_) => {}
            Err(e) => debug!("start failed: {e}"),
        }
    }
    let Some((z0, _)) = best_start else {
        return Ok(fallback(rng));
    };

    let train_actions = cfg.optimize_model && p.model.is_computation_aware() && actions.trainable();
    let n_z = z0.len();
    let n_theta = if cfg.optimize_model { theta.n_params() } else { 0 };
    let mut params = z0;
    if cfg.optimize_model {
        params.extend(theta.to_unconstrained());
    }
    if train_actions {
        params.extend(actions.values());
    }
    let mut lrs = vec![cfg.x_lr; n_z];
    lrs.resize(params.len(), cfg.model_lr);

    let unpack = |v: &[f64]| -> Result<(Points, Hyperparams, ActionMatrix)> {
        let xq = batch_from(&v[..n_z], d);
        let th = if cfg.optimize_model {
            theta.from_unconstrained(&v[n_z..n_z + n_theta])?
        } else {
            theta.clone()
        };
        let mut a = actions.clone();
        if train_actions {
            a.set_values(&v[n_z + n_theta..])?;
        }
        Ok((xq, th, a))
    };
    let total = |v: &[f64]| -> Result<f64> {
        let (xq, th, a) = unpack(v)?;
        let (st, qm) = eulbo_parts(p, &th, &a, &xq, &base, cfg.constant, None, false)?;
        Ok(st.breakdown.total + qm.util.value)
    };
    let value_and_grad = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (xq, th, a) = unpack(v)?;
        let g_own = if cfg.optimize_model { th.kernel.train_gram(p.x)? } else { gram.clone() };
        let (st, qm) = eulbo_parts(p, &th, &a, &xq, &base, cfg.constant, Some(&g_own), train_actions)?;
        let val = st.breakdown.total + qm.util.value;
        let mut g = utility_z_gradient(p, &st, &th, &v[..n_z], d, &base)?;
        if cfg.optimize_model {
            g.extend(fd_gradient(
                |t| {
                    let mut full = v.to_vec();
                    full[n_z..n_z + n_theta].copy_from_slice(t);
                    total(&full)
                },
                &v[n_z..n_z + n_theta],
            )?);
        }
        if train_actions {
            let dense = elbo_action_gradient(&st, &th, p.x, Some(&g_own)) + utility_action_gradient(&st, &qm);
            g.extend(restrict_action_gradient(&a, &dense));
        }
        Ok((val, g))
    };

    let (mut best_val, mut grad) = match value_and_grad(&params) {
        Ok(r) => r,
        Err(e) => {
            debug!("joint stage failed at its start ({e})");
            let (xq, th, a) = unpack(&params)?;
            return Ok(Proposal {
                xq,
                theta: th,
                actions: a,
                eulbo: f64::NAN,
                fallback: false,
            });
        }
    };
    let mut best = params.clone();
    let mut adam = Adam::new(params.len());
    for _ in 0..cfg.joint_iters {
        let mut next = params.clone();
        adam.ascend(&mut next, &grad, &lrs);
        match value_and_grad(&next) {
            Ok((val, g)) => {
                params = next;
                grad = g;
                if val > best_val {
                    best_val = val;
                    best = params.clone();
                }
            }
            Err(e) => {
                debug!("joint step failed ({e}); restarting from best iterate");
                params = best.clone();
                lrs.iter_mut().for_each(|l| *l *= 0.5);
                adam.reset();
                grad = value_and_grad(&params)?.1;
            }
        }
    }
    let (xq, th, a) = unpack(&best)?;
    Ok(Proposal {
        xq,
        theta: th,
        actions: a,
        eulbo: best_val,
        fallback: false,
    })
}
