use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rcagp::bayesopt::{bo_loop, BoConfig, BoTask, ExpertMode, TestFunction};
use rcagp::diagnostics::{default_grid, mean_convergence_check, pif_curve, worst_case_identity, PifSetup};
use rcagp::harness::{
    gist1d_dataset, run_regression_suite, summarize, ContaminationSpec, DatasetSource, Protocol, SigmaBar,
    SuiteConfig,
};
use rcagp::{
    build_actions, fit, ActionKind, ActionMatrix, ActionParam, Hyperparams, KernelKind, KernelSpec, LearningRate,
    MeanSpec, ModelKind, Points, RobustConfig,
};

#[derive(Parser)]
#[command(name = "rcagp", version, about = "Robust computation-aware Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contaminated regression benchmark over datasets, models and seeds.
    Regress(RegressArgs),
    /// Bayesian optimization of a test function under observation contamination.
    Bo(BoArgs),
    /// Posterior influence curves for a single perturbed observation.
    Pif(PifArgs),
    /// Worst-case error identities and the mean-convergence bound on random instances.
    Diag(DiagArgs),
    /// Sweep of the outlier fraction ε that sets the soft threshold.
    AblateC(AblateArgs),
}

#[derive(Args, Clone, Default)]
struct SuiteFlags {
    /// JSON config; flat keys mirror these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// β = 1 and five actions.
    #[arg(long)]
    paper_defaults: bool,
    /// CSV dataset; repeatable.
    #[arg(long = "csv")]
    csv: Vec<PathBuf>,
    /// Target column (name or 0-based index) for every `--csv`; defaults to the last column.
    #[arg(long)]
    target: Option<String>,
    /// Add the synthetic 1-D set with this many points.
    #[arg(long)]
    gist1d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    protocols: Option<Vec<String>>,
    #[arg(long)]
    p_outlier: Option<f64>,
    /// Number of seeds, starting at 0.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    actions: Option<usize>,
    /// inducing, sparse-block or dense.
    #[arg(long)]
    action_kind: Option<String>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    ard: bool,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// ELBO constant: gaussian or literal.
    #[arg(long)]
    constant: Option<String>,
    /// raw or standardized.
    #[arg(long)]
    sigma_bar: Option<String>,
    /// none, perfect or noisy.
    #[arg(long)]
    expert: Option<String>,
    #[arg(long)]
    sigma2_corr: Option<f64>,
    #[arg(long)]
    constant_expert_mean: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct RegressArgs {
    #[command(flatten)]
    suite: SuiteFlags,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    suite: SuiteFlags,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2,0.25,0.3")]
    epsilons: Vec<f64>,
}

#[derive(Args)]
struct BoArgs {
    /// hartmann6, branin or gist1d.
    #[arg(long, default_value = "hartmann6")]
    task: String,
    /// gp, rcgp, cagp or rcagp.
    #[arg(long, default_value = "rcagp")]
    model: String,
    #[arg(long, default_value_t = 25)]
    actions: usize,
    #[arg(long, default_value_t = 60)]
    budget: usize,
    #[arg(long, default_value_t = 50)]
    n_init: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long, default_value_t = 0.0)]
    p_outlier: f64,
    #[arg(long, default_value = "none")]
    expert: String,
    #[arg(long, default_value_t = 20)]
    expert_every: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2_corr: f64,
    #[arg(long)]
    constant_expert_mean: bool,
    #[arg(long)]
    paper_defaults: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Repeat with seeds `seed..seed+runs`.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PifArgs {
    #[arg(long, value_delimiter = ',', default_value = "rcagp,cagp,gp")]
    models: Vec<String>,
    /// Size of the synthetic 1-D training set.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Index of the perturbed observation.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 5)]
    actions: usize,
    #[arg(long, default_value = "matern52")]
    kernel: String,
    #[arg(long, default_value_t = 0.1)]
    sigma2: f64,
    #[arg(long)]
    paper_defaults: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Whitespace-separated columns for gnuplot.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct DiagArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 25)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-step rows of the mean-convergence check.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Regress(a) => regress(a),
        Command::Bo(a) => bo(a),
        Command::Pif(a) => pif_cmd(a),
        Command::Diag(a) => diag(a),
        Command::AblateC(a) => ablate(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn merge(base: &mut Value, over: Value) {
    if let (Value::Object(b), Value::Object(o)) = (base, over) {
        for (k, v) in o {
            b.insert(k, v);
        }
    }
}

fn suite_config(f: &SuiteFlags) -> Result<SuiteConfig> {
    let base = if f.paper_defaults { SuiteConfig::paper_defaults() } else { SuiteConfig::default() };
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = &f.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let over: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if !over.is_object() {
            bail!("config {} must be a JSON object", path.display());
        }
        merge(&mut value, over);
    }
    let mut cfg: SuiteConfig = serde_json::from_value(value).context("invalid config")?;

    for p in &f.csv {
        let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        cfg.datasets.push(DatasetSource {
            name,
            path: Some(p.clone()),
            target: f.target.clone(),
            ..DatasetSource::default()
        });
    }
    if let Some(n) = f.gist1d {
        cfg.datasets.push(DatasetSource {
            name: "gist1d".into(),
            synthetic: Some("gist1d".into()),
            n: Some(n),
            ..DatasetSource::default()
        });
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &f.$field {
                cfg.$field = v.clone();
            }
        )*};
    }
    set!(models, protocols, p_outlier, test_fraction, actions, action_kind, kernel, iters, lr, epsilon, sigma2, constant, expert, sigma2_corr);
    if let Some(s) = f.seeds {
        cfg.seeds = (0..s).collect();
    }
    if f.beta.is_some() {
        cfg.beta = f.beta;
    }
    if let Some(s) = &f.sigma_bar {
        cfg.sigma_bar = s.parse::<SigmaBar>()?;
    }
    if f.ard {
        cfg.ard = true;
    }
    if f.constant_expert_mean {
        cfg.constant_expert_mean = true;
    }
    if f.out.is_some() {
        cfg.out = f.out.clone();
    }
    if f.summary.is_some() {
        cfg.summary = f.summary.clone();
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn regress(a: RegressArgs) -> Result<()> {
    let cfg = suite_config(&a.suite)?;
    let rows = run_regression_suite(&cfg)?;
    println!("dataset\tmodel\tprotocol\truns\tfailures\tmae\tmae_std\tnll\tnll_std\twall_ms");
    for s in summarize(&rows) {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{:.4}\t{}\t{:.1}",
            s.dataset,
            s.model,
            s.protocol,
            s.runs,
            s.failures,
            s.mae_mean,
            fmt_opt(s.mae_std),
            s.nll_mean,
            fmt_opt(s.nll_std),
            s.wall_ms_mean
        );
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = suite_config(&a.suite)?;
    let mut out = match &a.suite.out {
        Some(p) => Some(csv_writer(p)?),
        None => None,
    };
    if let Some(w) = out.as_mut() {
        writeln!(w, "epsilon,dataset,model,protocol,seed,mae,nll,wall_ms")?;
    }
    let mut summary = Vec::new();
    println!("epsilon\tdataset\tmodel\tmae\tnll");
    for &eps in &a.epsilons {
        let cfg = SuiteConfig {
            epsilon: eps,
            out: None,
            summary: None,
            ..base.clone()
        };
        let rows = run_regression_suite(&cfg)?;
        if let Some(w) = out.as_mut() {
            for r in &rows {
                writeln!(w, "{eps},{},{},{},{},{},{},{}", r.dataset, r.model, r.protocol, r.seed, r.mae, r.nll, r.wall_ms)?;
            }
        }
        for s in summarize(&rows) {
            println!("{eps}\t{}\t{}\t{:.4}\t{:.4}", s.dataset, s.model, s.mae_mean, s.nll_mean);
            summary.push(json!({ "epsilon": eps, "summary": s }));
        }
    }
    if let Some(p) = &a.suite.summary {
        std::fs::write(p, serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn robust_preset(paper: bool) -> RobustConfig {
    if paper {
        RobustConfig::paper_defaults()
    } else {
        RobustConfig::default()
    }
}

fn bo(a: BoArgs) -> Result<()> {
    let f: TestFunction = a.task.parse()?;
    let model: ModelKind = a.model.parse()?;
    let expert: ExpertMode = a.expert.parse()?;
    let objective = |x: &[f64]| f.eval(x);
    let task = BoTask {
        objective: &objective,
        domain: f.domain(),
        minimize: true,
    };
    let mut w = match &a.out {
        Some(p) => Some(csv_writer(p)?),
        None => None,
    };
    if let Some(w) = w.as_mut() {
        writeln!(w, "seed,iter,best_true,wall_ms")?;
    }
    for seed in a.seed..a.seed + a.runs {
        let mut cfg = BoConfig::new(model, seed);
        cfg.actions = a.actions;
        cfg.budget = a.budget;
        cfg.n_init = a.n_init;
        cfg.acq.q = a.q;
        cfg.expert = expert;
        cfg.expert_every = a.expert_every;
        cfg.sigma2_corr = a.sigma2_corr;
        cfg.constant_expert_mean = a.constant_expert_mean;
        cfg.robust = robust_preset(a.paper_defaults);
        cfg.contamination = ContaminationSpec::new(
            if a.p_outlier > 0.0 { Protocol::BoChannel } else { Protocol::None },
            a.p_outlier,
            seed.wrapping_add(1000),
        );
        let h = bo_loop(&task, &cfg)?;
        if let Some(w) = w.as_mut() {
            for r in &h.records {
                writeln!(w, "{seed},{},{},{}", r.iter, r.best_true, r.wall_ms)?;
            }
        }
        let opt = f.optimum().map_or_else(String::new, |v| format!(" (optimum {v:.6})"));
        println!("seed {seed}: best {:.6} after {} evaluations{opt}", h.best_true(), h.evaluations());
    }
    Ok(())
}

fn pif_cmd(a: PifArgs) -> Result<()> {
    let data = gist1d_dataset(a.n, a.seed)?;
    if a.index >= data.len() {
        bail!("--index {} is out of range for {} points", a.index, data.len());
    }
    let kind: KernelKind = a.kernel.parse()?;
    let theta = Hyperparams::new(KernelSpec::isotropic(kind, 1.0, 1.0)?, a.sigma2, robust_preset(a.paper_defaults))?;
    let mean = MeanSpec::Constant(0.0);
    let actions = ActionMatrix::sparse_block(data.len(), a.actions.min(data.len()))?;
    let grid = default_grid(data.y[a.index]);

    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for name in &a.models {
        let model: ModelKind = name.parse()?;
        let setup = PifSetup {
            model,
            x: &data.x,
            y: &data.y,
            theta: &theta,
            mean: &mean,
            actions: &actions,
        };
        let c = pif_curve(setup, a.index, &grid)?;
        println!("{}\tslope {:.4}\t{}", model.name(), c.slope, if c.bounded { "bounded" } else { "unbounded" });
        for (y, p) in c.y_c.iter().zip(&c.pif) {
            rows.push((model.name(), *y, *p));
        }
        summary.insert(model.name().into(), json!({ "slope": c.slope, "bounded": c.bounded }));
    }
    if let Some(p) = &a.out {
        let mut w = csv_writer(p)?;
        writeln!(w, "model,y_c,pif")?;
        for (m, y, v) in &rows {
            writeln!(w, "{m},{y},{v}")?;
        }
    }
    if let Some(p) = &a.plot {
        let mut w = csv_writer(p)?;
        for name in &a.models {
            let model: ModelKind = name.parse()?;
            writeln!(w, "# {}", model.name())?;
            for (_, y, v) in rows.iter().filter(|r| r.0 == model.name()) {
                writeln!(w, "{y} {v}")?;
            }
            writeln!(w, "\n")?;
        }
    }
    if let Some(p) = &a.summary {
        std::fs::write(p, serde_json::to_string_pretty(&Value::Object(summary))?)?;
    }
    Ok(())
}

fn diag(a: DiagArgs) -> Result<()> {
    if a.n < 2 {
        bail!("--n must be at least 2");
    }
    let mut worst_identity = 0.0f64;
    let mut worst_bound = f64::NEG_INFINITY;
    let mut max_rho = 0.0f64;
    let mut rows = Vec::new();
    for k in 0..a.instances {
        let seed = a.seed + k as u64;
        let data = gist1d_dataset(a.n, seed)?;
        let kind = if k % 2 == 0 { KernelKind::Rbf } else { KernelKind::Matern52 };
        let theta = Hyperparams::new(
            KernelSpec::isotropic(kind, 1.0, 1.0)?,
            0.1,
            RobustConfig {
                beta: LearningRate::NoiseMatched,
                ..RobustConfig::default()
            },
        )?;
        let mean = MeanSpec::sample_mean(&data.y);
        let steps = a.n.min(8);
        let seq: Vec<ActionMatrix> = (1..=steps)
            .map(|i| build_actions(ActionKind::InducingKernel, &data.x, ActionParam::Count(i)))
            .collect::<rcagp::Result<_>>()?;
        let state = fit(ModelKind::Rcagp, &data.x, &data.y, &theta, &mean, &seq[steps / 2])?;
        for x in Points::from_scalars(&[-2.5, -1.0, 0.0, 1.5, 2.9]).rows() {
            let w = worst_case_identity(&state, x)?;
            for (l, r) in [(w.lhs1, w.rhs1), (w.lhs2, w.rhs2)] {
                let denom = l.abs().max(r.abs()).max(1e-6 * theta.kernel.outputscale());
                worst_identity = worst_identity.max((l - r).abs() / denom);
            }
        }
        for row in mean_convergence_check(ModelKind::Rcagp, &data.x, &data.y, &theta, &mean, &seq)? {
            worst_bound = worst_bound.max(row.lhs - row.bound);
            max_rho = max_rho.max(row.rho);
            rows.push((seed, row));
        }
    }
    println!("worst-case identities: max relative gap {worst_identity:.3e}");
    println!("mean convergence: max(lhs - bound) {worst_bound:.3e}, max rho {max_rho:.4}");
    if let Some(p) = &a.out {
        let mut w = csv_writer(p)?;
        writeln!(w, "seed,i,lhs,bound,rho")?;
        for (s, r) in &rows {
            writeln!(w, "{s},{},{},{},{}", r.i, r.lhs, r.bound, r.rho)?;
        }
    }
    if let Some(p) = &a.summary {
        let s = json!({
            "instances": a.instances,
            "identity_max_rel_gap": worst_identity,
            "bound_max_excess": worst_bound,
            "rho_max": max_rho,
        });
        std::fs::write(p, serde_json::to_string_pretty(&s)?)?;
    }
    Ok(())
}
