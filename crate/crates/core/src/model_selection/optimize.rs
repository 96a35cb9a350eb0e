use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::kernels::MeanSpec;
use crate::model_selection::elbo::{
    elbo_action_gradient, elbo_state, fd_gradient, restrict_action_gradient, ConstantTerm, ElboBreakdown,
};
use crate::model_selection::Hyperparams;
use crate::points::Points;
use crate::posterior::{ActionMatrix, ModelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub lr: f64,
    pub iters: usize,
    /// Also move the action values (SparseBlock/Dense only).
    pub optimize_actions: bool,
    /// Step size for the action values; defaults to `lr`.
    pub action_lr: Option<f64>,
    pub constant: ConstantTerm,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            iters: 50,
            optimize_actions: false,
            action_lr: None,
            constant: ConstantTerm::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub theta: Hyperparams,
    pub actions: ActionMatrix,
    pub best: ElboBreakdown,
    /// Best-so-far ELBO after the initial point and after every iteration.
    pub trace: Vec<f64>,
}

/// Bias-corrected adaptive-moment ascent.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `p` uphill along `grad`; `lr[k]` is the step size of coordinate `k`.
    pub fn ascend(&mut self, p: &mut [f64], grad: &[f64], lr: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..p.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            p[k] += lr[k] * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|v| *v = 0.0);
        self.v.iter_mut().for_each(|v| *v = 0.0);
        self.t = 0;
    }
}

/// Maximizes the ELBO over θ (and the action values when requested).
#[allow(clippy::too_many_arguments)]
pub fn optimize_hyperparams(
    model: ModelKind,
    x: &Points,
    y: &[f64],
    mean: &MeanSpec,
    theta0: &Hyperparams,
    actions0: &ActionMatrix,
    opt: &OptConfig,
) -> Result<OptResult> {
    if opt.iters == 0 {
        return usage("the optimizer needs at least one iteration");
    }
    if !(opt.lr > 0.0) {
        return usage(format!("learning rate must be positive, got {}", opt.lr));
    }
    let train_actions = opt.optimize_actions && actions0.trainable() && model.is_computation_aware();
    let n_theta = theta0.n_params();
    let mut p = theta0.to_unconstrained();
    if train_actions {
        p.extend(actions0.values());
    }
    let mut lr = vec![opt.lr; n_theta];
    lr.resize(p.len(), opt.action_lr.unwrap_or(opt.lr));

    let unpack = |p: &[f64]| -> Result<(Hyperparams, ActionMatrix)> {
        let th = theta0.from_unconstrained(&p[..n_theta])?;
        let mut a = actions0.clone();
        if train_actions {
            a.set_values(&p[n_theta..])?;
        }
        Ok((th, a))
    };
    let value = |p: &[f64]| -> Result<f64> {
        let (th, a) = unpack(p)?;
        Ok(elbo_state(model, x, y, &th, mean, &a, opt.constant, None)?.breakdown.total)
    };
    let gradient = |p: &[f64]| -> Result<(ElboBreakdown, Vec<f64>)> {
        let (th, a) = unpack(p)?;
        let st = elbo_state(model, x, y, &th, mean, &a, opt.constant, None)?;
        let mut g = fd_gradient(
            |q| {
                let mut full = p.to_vec();
                full[..n_theta].copy_from_slice(q);
                value(&full)
            },
            &p[..n_theta],
        )?;
        if train_actions {
            let dense = elbo_action_gradient(&st, &th, x, None);
            g.extend(restrict_action_gradient(&a, &dense));
        }
        Ok((st.breakdown, g))
    };

    let (first, mut grad) = gradient(&p).map_err(|e| Error::Optimization {
        msg: format!("objective failed at the initial point: {e}"),
        last_valid: None,
    })?;
    let mut best_p = p.clone();
    let mut best = first;
    let mut trace = vec![best.total];
    let mut adam = Adam::new(p.len());
    let mut failures = 0usize;

    for it in 0..opt.iters {
        let mut next = p.clone();
        adam.ascend(&mut next, &grad, &lr);
        match gradient(&next) {
            Ok((val, g)) => {
                p = next;
                grad = g;
                if val.total > best.total {
                    best = val;
                    best_p = p.clone();
                }
            }
            Err(e) => {
                failures += 1;
                debug!("iteration {it}: objective failed ({e}); restarting from best iterate");
                p = best_p.clone();
                for l in lr.iter_mut() {
                    *l *= 0.5;
                }
                adam.reset();
                grad = gradient(&p)?.1;
            }
        }
        trace.push(best.total);
    }
    if failures == opt.iters {
        debug!("every iteration failed; returning the initial point");
    }
    let (theta, actions) = unpack(&best_p)?;
    Ok(OptResult {
        theta,
        actions,
        best,
        trace,
    })
}
