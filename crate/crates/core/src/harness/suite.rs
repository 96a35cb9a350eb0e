use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bayesopt::{ExpertMode, TestFunction};
use crate::error::{usage, Error, Result};
use crate::expert::{build_expert_prior, ExpertConfig, ExpertFeedback};
use crate::harness::contaminate::{contaminate, ContaminationSpec, Protocol};
use crate::harness::data::{load_csv, split, standardize, Dataset, TargetColumn};
use crate::harness::metrics::{mae, nll};
use crate::kernels::{KernelKind, KernelSpec, MeanSpec};
use crate::model_selection::{optimize_hyperparams, Hyperparams, OptConfig};
use crate::points::Points;
use crate::posterior::{build_actions, fit, ActionKind, ActionMatrix, ActionParam, ModelKind};
use crate::robust::{LearningRate, RobustConfig};

/// Scale used for the contamination magnitudes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaBar {
    /// Std of the raw targets of the whole dataset.
    Raw,
    /// Std of the training-split targets (1 after z-scoring).
    #[default]
    Standardized,
}

impl FromStr for SigmaBar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(SigmaBar::Raw),
            "standardized" => Ok(SigmaBar::Standardized),
            other => usage(format!("unknown sigma-bar mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSource {
    pub name: String,
    pub path: Option<PathBuf>,
    /// Column name or index; defaults to the last column.
    pub target: Option<String>,
    /// `gist1d` generates a synthetic set instead of reading a file.
    pub synthetic: Option<String>,
    pub n: Option<usize>,
}

/// Suite configuration. Keys mirror the CLI flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub datasets: Vec<DatasetSource>,
    pub models: Vec<String>,
    pub protocols: Vec<String>,
    pub p_outlier: f64,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub actions: usize,
    pub action_kind: String,
    pub kernel: String,
    pub ard: bool,
    pub iters: usize,
    pub lr: f64,
    pub epsilon: f64,
    /// Fixed β; absent means β = σ/√2.
    pub beta: Option<f64>,
    /// Initial noise variance for the ELBO search.
    pub sigma2: f64,
    pub constant: String,
    pub sigma_bar: SigmaBar,
    pub expert: String,
    pub sigma2_corr: f64,
    /// Location-free average of the corrections instead of the kernel-weighted mean.
    pub constant_expert_mean: bool,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            models: vec!["cagp".into(), "rcagp".into()],
            protocols: vec!["asymmetric".into()],
            p_outlier: 0.1,
            seeds: (0..10).collect(),
            test_fraction: 0.2,
            actions: 25,
            action_kind: "inducing".into(),
            kernel: "matern52".into(),
            ard: false,
            iters: 50,
            lr: 0.01,
            epsilon: 0.2,
            beta: None,
            sigma2: 0.1,
            constant: "gaussian".into(),
            sigma_bar: SigmaBar::Standardized,
            expert: "none".into(),
            sigma2_corr: 1.0,
            constant_expert_mean: false,
            out: None,
            summary: None,
        }
    }
}

impl SuiteConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The Appendix-I style preset: β = 1, five actions, ε = 0.2.
    pub fn paper_defaults() -> Self {
        Self {
            actions: 5,
            beta: Some(1.0),
            ..Self::default()
        }
    }

    fn cell(&self, model: ModelKind, protocol: Protocol, seed: u64) -> Result<CellSpec> {
        Ok(CellSpec {
            model,
            protocol,
            fraction: self.p_outlier,
            seed,
            test_fraction: self.test_fraction,
            actions: self.actions,
            action_kind: self.action_kind.parse()?,
            kernel: self.kernel.parse()?,
            ard: self.ard,
            opt: OptConfig {
                lr: self.lr,
                iters: self.iters,
                constant: self.constant.parse()?,
                ..OptConfig::default()
            },
            robust: RobustConfig {
                beta: self.beta.map_or(LearningRate::NoiseMatched, LearningRate::Fixed),
                epsilon: self.epsilon,
                c_override: None,
            },
            sigma2: self.sigma2,
            sigma_bar: self.sigma_bar,
            expert: self.expert.parse()?,
            sigma2_corr: self.sigma2_corr,
            constant_expert_mean: self.constant_expert_mean,
        })
    }
}

/// Fully resolved settings of one (model, protocol, seed) run.
#[derive(Clone, Debug)]
pub struct CellSpec {
    pub model: ModelKind,
    pub protocol: Protocol,
    pub fraction: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub actions: usize,
    pub action_kind: ActionKind,
    pub kernel: KernelKind,
    pub ard: bool,
    pub opt: OptConfig,
    pub robust: RobustConfig,
    pub sigma2: f64,
    pub sigma_bar: SigmaBar,
    pub expert: ExpertMode,
    pub sigma2_corr: f64,
    pub constant_expert_mean: bool,
}

impl CellSpec {
    pub fn new(model: ModelKind, protocol: Protocol, seed: u64) -> Self {
        SuiteConfig::default()
            .cell(model, protocol, seed)
            .expect("default configuration parses")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub dataset: String,
    pub protocol: String,
    pub seed: u64,
    pub mae: f64,
    pub nll: f64,
    pub wall_ms: f64,
    pub error: Option<String>,
}

/// `x ~ U(−3, 3)`, `y = sin(3x) + 0.3x² + N(0, 0.1²)`.
pub fn gist1d_dataset(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    let xs: Vec<f64> = (0..n).map(|_| -3.0 + 6.0 * rng.random::<f64>()).collect();
    let ys = xs
        .iter()
        .map(|x| Ok(TestFunction::Gist1D.eval(&[*x])? + noise.sample(&mut rng)))
        .collect::<Result<Vec<f64>>>()?;
    let mut d = Dataset::new(Points::from_scalars(&xs), ys)?;
    d.feature_names = vec!["x".into()];
    d.target_name = "y".into();
    Ok(d)
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn cell_inner(data: &Dataset, spec: &CellSpec) -> Result<(f64, f64, f64)> {
    let (train, test) = split(data, spec.test_fraction, spec.seed)?;
    let cont = ContaminationSpec {
        protocol: spec.protocol,
        fraction: spec.fraction,
        bounds: spec.protocol.default_bounds(),
        sigma_bar: match spec.sigma_bar {
            SigmaBar::Raw => Some(sample_std(&data.y)),
            SigmaBar::Standardized => None,
        },
        seed: spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
    };
    let (dirty, outliers) = contaminate(&train, &cont)?;
    let (train_s, test_s) = standardize(&dirty, &test)?;
    let stats = train_s.stats.clone().expect("standardized");

    let mean = match spec.expert {
        ExpertMode::None => MeanSpec::sample_mean(&train_s.y),
        mode => {
            if outliers.is_empty() {
                MeanSpec::sample_mean(&train_s.y)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cont.seed ^ 0x5A5A);
                let noise = Normal::new(0.0, spec.sigma2_corr.sqrt())
                    .map_err(|e| Error::Usage(format!("sigma2_corr: {e}")))?;
                let corrections = outliers
                    .iter()
                    .map(|&i| {
                        let clean = (train.y[i] - stats.y_mean) / stats.y_std;
                        match mode {
                            ExpertMode::Noisy => clean + noise.sample(&mut rng),
                            _ => clean,
                        }
                    })
                    .collect();
                let fb = ExpertFeedback::new(outliers.clone(), vec![true; outliers.len()], corrections, mode.correction_variance(spec.sigma2_corr))?;
                let table = build_expert_prior(&train_s.x, &train_s.y, &fb, &ExpertConfig::constant_weighting(spec.constant_expert_mean))?;
                MeanSpec::ExpertGuided(Arc::new(table))
            }
        }
    };

    let d = train_s.dim();
    let ls = if spec.ard { vec![1.0; d] } else { vec![1.0] };
    let theta0 = Hyperparams::new(KernelSpec::new(spec.kernel, ls, 1.0)?, spec.sigma2, spec.robust.clone())?;
    let n = train_s.len();
    let actions = if spec.model.is_computation_aware() {
        build_actions(spec.action_kind, &train_s.x, ActionParam::Count(spec.actions.min(n)))?
    } else {
        ActionMatrix::empty(n)
    };

    let opt = optimize_hyperparams(spec.model, &train_s.x, &train_s.y, &mean, &theta0, &actions, &spec.opt)?;
    let t0 = Instant::now();
    let post = fit(spec.model, &train_s.x, &train_s.y, &opt.theta, &mean, &opt.actions)?;
    let pred = post.predict_many(&test_s.x)?;
    let wall = t0.elapsed().as_secs_f64() * 1e3;

    let means: Vec<f64> = pred.iter().map(|p| p.mean).collect();
    Ok((mae(&means, &test_s.y)?, nll(&pred, &test_s.y, opt.theta.sigma2)?, wall))
}

/// Split, contaminate the training part, standardize, fit with ELBO search
/// and score on the test part. Failures are recorded, not raised.
pub fn run_cell(data: &Dataset, dataset: &str, spec: &CellSpec) -> RunResult {
    let mut r = RunResult {
        model: spec.model.name().into(),
        dataset: dataset.into(),
        protocol: spec.protocol.name().into(),
        seed: spec.seed,
        mae: f64::NAN,
        nll: f64::NAN,
        wall_ms: 0.0,
        error: None,
    };
    match cell_inner(data, spec) {
        Ok((m, l, w)) => {
            r.mae = m;
            r.nll = l;
            r.wall_ms = w;
        }
        Err(e) => {
            warn!("{dataset}/{}/{}/{}: {e}", r.model, r.protocol, r.seed);
            r.error = Some(e.to_string());
        }
    }
    r
}

fn load_source(src: &DatasetSource) -> Result<Dataset> {
    match (&src.synthetic, &src.path) {
        (Some(kind), _) => match kind.to_ascii_lowercase().as_str() {
            "gist1d" => gist1d_dataset(src.n.unwrap_or(200), 0),
            other => usage(format!("unknown synthetic dataset `{other}`")),
        },
        (None, Some(path)) => {
            let target = match &src.target {
                Some(t) => t.parse()?,
                None => TargetColumn::default(),
            };
            load_csv(path, &target)
        }
        (None, None) => usage(format!("dataset `{}` needs a path or a synthetic generator", src.name)),
    }
}

pub fn run_regression_suite(cfg: &SuiteConfig) -> Result<Vec<RunResult>> {
    if cfg.datasets.is_empty() {
        return usage("the suite lists no datasets");
    }
    let models = cfg.models.iter().map(|m| m.parse()).collect::<Result<Vec<ModelKind>>>()?;
    let protocols = cfg.protocols.iter().map(|p| p.parse()).collect::<Result<Vec<Protocol>>>()?;
    let mut rows = Vec::new();
    for src in &cfg.datasets {
        let data = load_source(src)?;
        for &model in &models {
            for &protocol in &protocols {
                for &seed in &cfg.seeds {
                    rows.push(run_cell(&data, &src.name, &cfg.cell(model, protocol, seed)?));
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.dataset, &a.model, &a.protocol, a.seed).cmp(&(&b.dataset, &b.model, &b.protocol, b.seed))
    });
    if let Some(out) = &cfg.out {
        write_results(out, &rows)?;
    }
    if let Some(path) = &cfg.summary {
        std::fs::write(path, serde_json::to_string_pretty(&summarize(&rows))?)?;
    }
    Ok(rows)
}

pub fn write_results(path: impl AsRef<Path>, rows: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: String,
    pub protocol: String,
    pub runs: usize,
    pub failures: usize,
    pub mae_mean: f64,
    /// Sample standard deviation; absent with fewer than two runs.
    pub mae_std: Option<f64>,
    pub nll_mean: f64,
    pub nll_std: Option<f64>,
    pub wall_ms_mean: f64,
}

fn mean_and_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.len() > 1).then(|| (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (m, s)
}

/// Mean and sample std over seeds of the successful runs of each cell.
pub fn summarize(rows: &[RunResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunResult>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.model.clone(), r.protocol.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, model, protocol), rs)| {
            let ok: Vec<&&RunResult> = rs.iter().filter(|r| r.error.is_none()).collect();
            let maes: Vec<f64> = ok.iter().map(|r| r.mae).collect();
            let nlls: Vec<f64> = ok.iter().map(|r| r.nll).collect();
            let walls: Vec<f64> = ok.iter().map(|r| r.wall_ms).collect();
            let (mae_mean, mae_std) = mean_and_std(&maes);
            let (nll_mean, nll_std) = mean_and_std(&nlls);
            SummaryRow {
                dataset,
                model,
                protocol,
                runs: rs.len(),
                failures: rs.len() - ok.len(),
                mae_mean,
                mae_std,
                nll_mean,
                nll_std,
                wall_ms_mean: mean_and_std(&walls).0,
            }
        })
        .collect()
}
