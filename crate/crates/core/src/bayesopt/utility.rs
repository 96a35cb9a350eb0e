use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{usage, Error, Result};
use crate::points::Points;
use crate::posterior::PosteriorState;

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_utility(f_val: f64, y_star: f64) -> f64 {
    softplus(f_val - y_star)
}

fn log_softplus(r: f64) -> f64 {
    if r < -700.0 {
        r
    } else {
        softplus(r).ln()
    }
}

/// Fixed standard-normal base draws for reparameterized sampling: one row
/// per Monte-Carlo sample, one column per batch point.
#[derive(Clone, Debug)]
pub struct BaseSamples {
    z: DMatrix<f64>,
    eps: DMatrix<f64>,
}

impl BaseSamples {
    pub fn new(count: usize, q: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return usage("at least one Monte-Carlo sample is required");
        }
        if q == 0 {
            return usage("batch size must be at least one");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(count, q, |_, _| StandardNormal.sample(&mut rng));
        let eps = DMatrix::from_fn(count, q, |_, _| StandardNormal.sample(&mut rng));
        Ok(Self { z, eps })
    }

    pub fn count(&self) -> usize {
        self.z.nrows()
    }

    pub fn batch(&self) -> usize {
        self.z.ncols()
    }

    pub fn noise(&self, s: usize, c: usize) -> f64 {
        self.eps[(s, c)]
    }
}

/// Value of the Monte-Carlo log utility and its derivatives with respect to
/// the predictive mean and (symmetric) covariance.
#[derive(Clone, Debug)]
pub(crate) struct UtilityEval {
    pub value: f64,
    pub d_mean: DVector<f64>,
    /// `G` with `dU = tr(G dΣ)`.
    pub d_cov: DMatrix<f64>,
}

fn jittered_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    let scale = cov.diagonal().iter().fold(f64::MIN_POSITIVE, |a, &b| a.max(b));
    for rel in [1e-12, 1e-10, 1e-8, 1e-6] {
        let mut m = cov.clone();
        for j in 0..m.nrows() {
            m[(j, j)] += rel * scale;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c.l());
        }
    }
    Err(Error::NotPositiveDefinite("predictive covariance of the query batch".into()))
}

pub(crate) fn mc_log_utility(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    y_star: f64,
    base: &BaseSamples,
    with_grad: bool,
) -> Result<UtilityEval> {
    let q = mu.len();
    if base.batch() != q || cov.nrows() != q {
        return Err(Error::DimensionMismatch {
            expected: base.batch(),
            got: q,
        });
    }
    if mu.iter().chain(cov.iter()).any(|v| !v.is_finite()) || !y_star.is_finite() {
        return Err(Error::NonFinite("query predictive moments".into()));
    }
    let l = jittered_cholesky(cov)?;
    let s_count = base.count();
    let mut log_u = Vec::with_capacity(s_count);
    let mut winners = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let mut best = (0usize, f64::NEG_INFINITY);
        for c in 0..q {
            let mut f = mu[c];
            for b in 0..=c {
                f += l[(c, b)] * base.z[(s, b)];
            }
            let r = f + base.eps[(s, c)] - y_star;
            if r > best.1 {
                best = (c, r);
            }
        }
        winners.push(best);
        log_u.push(log_softplus(best.1));
    }
    let top = log_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_u.iter().map(|v| (v - top).exp()).sum();
    let lse = top + sum.ln();
    let value = lse - (s_count as f64).ln();

    let mut d_mean = DVector::zeros(q);
    let mut d_cov = DMatrix::zeros(q, q);
    if with_grad {
        let mut l_bar = DMatrix::zeros(q, q);
        for s in 0..s_count {
            let (c, r) = winners[s];
            // sigmoid(r)/Σu, written in logs
            let g = (log_u[s] - lse).exp() * (-softplus(-r) - log_u[s]).exp();
            d_mean[c] += g;
            for b in 0..=c {
                l_bar[(c, b)] += g * base.z[(s, b)];
            }
        }
        let mut p = l.transpose() * &l_bar;
        for a in 0..q {
            p[(a, a)] *= 0.5;
            for b in a + 1..q {
                p[(a, b)] = 0.0;
            }
        }
        let lt = l.transpose();
        let left = lt
            .solve_upper_triangular(&p)
            .ok_or_else(|| Error::NotPositiveDefinite("query covariance factor".into()))?;
        let sbar = lt
            .solve_upper_triangular(&left.transpose())
            .ok_or_else(|| Error::NotPositiveDefinite("query covariance factor".into()))?
            .transpose();
        d_cov = 0.5 * (&sbar + sbar.transpose());
    }
    Ok(UtilityEval { value, d_mean, d_cov })
}

/// Rows sorted lexicographically, with the permutation that sorts them.
pub(crate) fn sorted_batch(xq: &Points) -> (Points, Vec<usize>) {
    let mut order: Vec<usize> = (0..xq.len()).collect();
    order.sort_by(|&a, &b| {
        xq.row(a)
            .iter()
            .zip(xq.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    (xq.select(&order), order)
}

/// `log (1/S) Σₛ maxₖ softplus(f(xₖ) + εₛₖ − y*)` under joint posterior draws
/// at the batch. Deterministic in `seed` and in the order of the batch.
pub fn expected_log_utility(
    posterior: &PosteriorState,
    xq: &Points,
    y_star: f64,
    s_count: usize,
    seed: u64,
) -> Result<f64> {
    if xq.is_empty() {
        return usage("the query batch is empty");
    }
    let base = BaseSamples::new(s_count, xq.len(), seed)?;
    let (sorted, _) = sorted_batch(xq);
    let (mu, cov) = posterior.joint_predictive(&sorted)?;
    Ok(mc_log_utility(&mu, &cov, y_star, &base, false)?.value)
}
