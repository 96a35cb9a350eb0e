use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayesopt::acquire::{propose_batch, AcqConfig, BoProblem};
use crate::error::{usage, Error, Result};
use crate::expert::{build_expert_prior, ExpertConfig, ExpertFeedback};
use crate::harness::{ContaminationSpec, ObservationChannel};
use crate::kernels::{KernelKind, KernelSpec, MeanSpec};
use crate::model_selection::{optimize_hyperparams, Hyperparams, OptConfig};
use crate::points::Points;
use crate::posterior::{ActionMatrix, ModelKind};
use crate::robust::RobustConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertMode {
    None,
    /// Corrections equal the uncontaminated values.
    Perfect,
    /// Corrections carry `N(0, σ²_corr)` noise.
    Noisy,
}

/// Correction variance handed to the expert prior; perfect corrections are
/// trusted almost exactly.
pub(crate) const PERFECT_SIGMA2_CORR: f64 = 1e-9;

impl ExpertMode {
    pub fn correction_variance(self, sigma2_corr: f64) -> f64 {
        match self {
            ExpertMode::Perfect => PERFECT_SIGMA2_CORR,
            _ => sigma2_corr,
        }
    }
}

impl FromStr for ExpertMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ExpertMode::None),
            "perfect" => Ok(ExpertMode::Perfect),
            "noisy" => Ok(ExpertMode::Noisy),
            other => usage(format!("unknown expert mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub model: ModelKind,
    pub budget: usize,
    pub n_init: usize,
    /// Number of action blocks for the computation-aware models.
    pub actions: usize,
    pub kernel: KernelKind,
    pub robust: RobustConfig,
    pub contamination: ContaminationSpec,
    pub acq: AcqConfig,
    /// ELBO fit of θ on the initial design.
    pub init_opt: OptConfig,
    pub expert: ExpertMode,
    pub expert_every: usize,
    pub sigma2_corr: f64,
    pub constant_expert_mean: bool,
    pub seed: u64,
}

impl BoConfig {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        Self {
            model,
            budget: 60,
            n_init: 50,
            actions: 25,
            kernel: KernelKind::Matern52,
            robust: RobustConfig::default(),
            contamination: ContaminationSpec::none(),
            acq: AcqConfig::default(),
            init_opt: OptConfig {
                lr: 0.05,
                iters: 50,
                optimize_actions: true,
                ..OptConfig::default()
            },
            expert: ExpertMode::None,
            expert_every: 20,
            sigma2_corr: 1.0,
            constant_expert_mean: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.acq.validate()?;
        self.robust.validate()?;
        self.contamination.validate()?;
        if self.n_init == 0 {
            return usage("n_init must be at least 1");
        }
        if self.model.is_computation_aware() && self.actions == 0 {
            return usage("computation-aware models need at least one action");
        }
        if self.expert != ExpertMode::None && self.expert_every == 0 {
            return usage("expert_every must be positive");
        }
        if !(self.sigma2_corr > 0.0) {
            return usage("sigma2_corr must be positive");
        }
        Ok(())
    }
}

/// One row per iteration; iteration 0 is the initial design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub iter: usize,
    /// Evaluated points in the original domain.
    pub x: Vec<Vec<f64>>,
    pub y_observed: Vec<f64>,
    pub y_true: Vec<f64>,
    pub contaminated: Vec<bool>,
    /// Points whose evaluation failed and were skipped.
    pub failed: usize,
    pub best_true: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoHistory {
    pub minimize: bool,
    pub records: Vec<BoRecord>,
}

impl BoHistory {
    pub fn best_true(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.best_true)
    }

    pub fn evaluations(&self) -> usize {
        self.records.iter().map(|r| r.y_true.len()).sum()
    }
}

/// Objective and search box; the loop minimizes when `minimize` is set.
pub struct BoTask<'a> {
    pub objective: &'a dyn Fn(&[f64]) -> Result<f64>,
    pub domain: Vec<(f64, f64)>,
    pub minimize: bool,
}

fn to_domain(u: &[f64], domain: &[(f64, f64)]) -> Vec<f64> {
    u.iter()
        .zip(domain)
        .map(|(v, (lo, hi))| (lo + v * (hi - lo)).clamp(*lo, *hi))
        .collect()
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// SparseBlock actions for `n` rows, keeping learned values for old rows.
fn grow_actions(prev: &ActionMatrix, n: usize, i: usize) -> Result<ActionMatrix> {
    let mut next = ActionMatrix::sparse_block(n, i.min(n))?;
    if let ActionMatrix::SparseBlock { values: old, .. } = prev {
        let mut vals = next.values();
        for (v, o) in vals.iter_mut().zip(old) {
            *v = *o;
        }
        next.set_values(&vals)?;
    }
    Ok(next)
}

struct Observations {
    x: Points,
    y_obs: Vec<f64>,
    y_true: Vec<f64>,
    contaminated: Vec<bool>,
}

impl Observations {
    /// Internal targets: maximization sense, z-scored.
    fn standardized(&self, sign: f64) -> (Vec<f64>, f64, f64) {
        let v: Vec<f64> = self.y_obs.iter().map(|y| sign * y).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s = sample_std(&v);
        let s = if s > 0.0 { s } else { 1.0 };
        (v.iter().map(|a| (a - m) / s).collect(), m, s)
    }
}

/// Expert prior mean from the outliers known so far.
fn expert_mean(
    obs: &Observations,
    known: &[(usize, f64)],
    sign: f64,
    m: f64,
    s: f64,
    y: &[f64],
    sigma2_corr: f64,
    constant: bool,
) -> Result<MeanSpec> {
    if known.is_empty() || known.len() >= obs.x.len() {
        return Ok(MeanSpec::default());
    }
    let fb = ExpertFeedback::new(
        known.iter().map(|k| k.0).collect(),
        vec![true; known.len()],
        known.iter().map(|k| (sign * k.1 - m) / s).collect(),
        sigma2_corr / (s * s),
    )?;
    let table = build_expert_prior(&obs.x, y, &fb, &ExpertConfig::constant_weighting(constant))?;
    Ok(MeanSpec::ExpertGuided(Arc::new(table)))
}

/// Runs batch Bayesian optimization of a black-box objective.
pub fn bo_loop(task: &BoTask, cfg: &BoConfig) -> Result<BoHistory> {
    cfg.validate()?;
    let d = task.domain.len();
    if d == 0 || task.domain.iter().any(|(lo, hi)| !(lo < hi)) {
        return usage("search domain must be a non-empty box");
    }
    let sign = if task.minimize { -1.0 } else { 1.0 };
    let better = |a: f64, b: f64| if task.minimize { a < b } else { a > b };

    let mut design = ChaCha8Rng::seed_from_u64(cfg.seed);
    design.set_stream(1);
    let mut mc = ChaCha8Rng::seed_from_u64(cfg.seed);
    mc.set_stream(2);
    let mut expert_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    expert_rng.set_stream(4);

    let start = Instant::now();
    let mut obs = Observations {
        x: Points::empty(d),
        y_obs: Vec::new(),
        y_true: Vec::new(),
        contaminated: Vec::new(),
    };
    let mut init_x = Vec::new();
    let mut init_true = Vec::new();
    let mut failed = 0;
    for _ in 0..cfg.n_init {
        let u: Vec<f64> = (0..d).map(|_| design.random::<f64>()).collect();
        match (task.objective)(&to_domain(&u, &task.domain)) {
            Ok(f) if f.is_finite() => {
                init_x.push(u);
                init_true.push(f);
            }
            Ok(_) | Err(_) => failed += 1,
        }
    }
    if init_true.is_empty() {
        return Err(Error::State("every initial evaluation failed".into()));
    }
    let sigma_bar = match sample_std(&init_true) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let mut channel = ObservationChannel::new(&cfg.contamination, sigma_bar)?;
    // Outliers are added on the maximized scale, so they look like improvements.
    let up = if task.minimize { -1.0 } else { 1.0 };
    let mut observe = |f: f64| {
        let (g, hit) = channel.observe(up * f);
        (up * g, hit)
    };
    let mut best_true = if task.minimize { f64::INFINITY } else { f64::NEG_INFINITY };
    let mut first = BoRecord {
        iter: 0,
        x: Vec::new(),
        y_observed: Vec::new(),
        y_true: Vec::new(),
        contaminated: Vec::new(),
        failed,
        best_true,
        wall_ms: 0.0,
    };
    for (u, f) in init_x.into_iter().zip(init_true) {
        let (y, hit) = observe(f);
        obs.x.push(&u)?;
        obs.y_obs.push(y);
        obs.y_true.push(f);
        obs.contaminated.push(hit);
        if better(f, best_true) {
            best_true = f;
        }
        first.x.push(to_domain(&u, &task.domain));
        first.y_observed.push(y);
        first.y_true.push(f);
        first.contaminated.push(hit);
    }
    first.best_true = best_true;
    first.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut history = BoHistory {
        minimize: task.minimize,
        records: vec![first],
    };

    let ard_kernel = KernelSpec::new(cfg.kernel, vec![0.5; d], 1.0)?;
    let mut theta = Hyperparams::new(ard_kernel, 0.1, cfg.robust.clone())?;
    let mut actions = ActionMatrix::sparse_block(obs.x.len(), cfg.actions.min(obs.x.len()).max(1))?;
    let mut known: Vec<(usize, f64)> = Vec::new();

    {
        let (y, _, _) = obs.standardized(sign);
        match optimize_hyperparams(cfg.model, &obs.x, &y, &MeanSpec::default(), &theta, &actions, &cfg.init_opt) {
            Ok(r) => {
                theta = r.theta;
                actions = r.actions;
            }
            Err(e) => warn!("initial model fit failed ({e}); keeping default hyperparameters"),
        }
    }

    let mut used = 0;
    let mut iter = 0;
    while used < cfg.budget {
        iter += 1;
        let t0 = Instant::now();
        let q = cfg.acq.q.min(cfg.budget - used);
        let n = obs.x.len();
        let (y, m, s) = obs.standardized(sign);
        let y_star = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = if cfg.expert == ExpertMode::None {
            MeanSpec::default()
        } else {
            expert_mean(&obs, &known, sign, m, s, &y, cfg.expert.correction_variance(cfg.sigma2_corr), cfg.constant_expert_mean)?
        };
        actions = grow_actions(&actions, n, cfg.actions)?;
        let problem = BoProblem {
            model: cfg.model,
            x: &obs.x,
            y: &y,
            mean: &mean,
            y_star,
        };
        let acq = AcqConfig { q, ..cfg.acq.clone() };
        let mc_seed = mc.next_u64();
        let prop = propose_batch(&problem, &theta, &actions, &acq, &mut design, mc_seed)?;
        if prop.fallback {
            debug!("iteration {iter}: random fallback batch");
        }
        theta = prop.theta;
        actions = prop.actions;

        let mut rec = BoRecord {
            iter,
            x: Vec::new(),
            y_observed: Vec::new(),
            y_true: Vec::new(),
            contaminated: Vec::new(),
            failed: 0,
            best_true,
            wall_ms: 0.0,
        };
        for u in prop.xq.rows() {
            used += 1;
            let xd = to_domain(u, &task.domain);
            let f = match (task.objective)(&xd) {
                Ok(f) if f.is_finite() => f,
                Ok(_) | Err(_) => {
                    rec.failed += 1;
                    continue;
                }
            };
            let (yo, hit) = observe(f);
            obs.x.push(u)?;
            obs.y_obs.push(yo);
            obs.y_true.push(f);
            obs.contaminated.push(hit);
            if better(f, best_true) {
                best_true = f;
            }
            rec.x.push(xd);
            rec.y_observed.push(yo);
            rec.y_true.push(f);
            rec.contaminated.push(hit);
        }
        if cfg.expert != ExpertMode::None && iter % cfg.expert_every == 0 {
            let noise = Normal::new(0.0, cfg.sigma2_corr.sqrt()).expect("positive variance");
            for j in 0..obs.y_obs.len() {
                if obs.contaminated[j] && !known.iter().any(|k| k.0 == j) {
                    let corr = match cfg.expert {
                        ExpertMode::Noisy => obs.y_true[j] + noise.sample(&mut expert_rng),
                        _ => obs.y_true[j],
                    };
                    known.push((j, corr));
                }
            }
        }
        rec.best_true = best_true;
        rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        history.records.push(rec);
    }
    Ok(history)
}
