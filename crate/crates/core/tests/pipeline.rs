use std::path::PathBuf;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcagp::harness::{contaminate, load_csv, run_regression_suite, split, standardize, SuiteConfig, TargetColumn};
use rcagp::model_selection::{elbo, ConstantTerm};
use rcagp::robust::soft_threshold;
use rcagp::{
    fit, ActionMatrix, ContaminationSpec, Hyperparams, KernelKind, KernelSpec, MeanSpec, ModelKind, Points, Protocol,
    RobustConfig,
};

fn boston() -> rcagp::Dataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/boston.csv");
    load_csv(path, &TargetColumn::Name("MEDV".into())).unwrap()
}

fn instance(seed: u64, n: usize) -> (Points, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let y = xs.iter().map(|x| (1.7 * x).sin() + 0.05 * r.random_range(-1.0..1.0)).collect();
    (Points::from_scalars(&xs), y)
}

#[test]
fn boston_loads_with_thirteen_features() {
    let d = boston();
    assert_eq!(d.len(), 506);
    assert_eq!(d.dim(), 13);
    assert_eq!(d.target_name, "MEDV");
    assert_eq!(d.feature_names[0], "CRIM");
}

#[test]
fn contamination_leaves_the_test_split_alone() {
    let d = boston();
    let (train, test) = split(&d, 0.2, 4).unwrap();
    let before = test.clone();
    let (dirty, idx) = contaminate(&train, &ContaminationSpec::new(Protocol::Asymmetric, 0.1, 9)).unwrap();
    assert_eq!(idx.len(), train.len() / 10);
    let (_, test_s) = standardize(&dirty, &test).unwrap();
    assert_eq!(test.y, before.y);
    assert_eq!(test.x, before.x);
    assert_eq!(test_s.len(), before.len());
}

#[test]
fn planted_outlier_barely_moves_the_robust_mean() {
    let (x, clean) = instance(3, 40);
    let th = Hyperparams::new(
        KernelSpec::isotropic(KernelKind::Matern52, 0.7, 1.0).unwrap(),
        0.05,
        RobustConfig::default(),
    )
    .unwrap();
    let mean = MeanSpec::Constant(0.0);
    let o = 17;
    let c = soft_threshold(&clean, th.robust.epsilon).unwrap();
    let mut dirty = clean.clone();
    dirty[o] = 10.0 * c;
    let actions = ActionMatrix::sparse_block(40, 10).unwrap();
    let shift = |model: ModelKind, a: &ActionMatrix| {
        let before = fit(model, &x, &clean, &th, &mean, a).unwrap().predict(x.row(o)).unwrap().mean;
        let after = fit(model, &x, &dirty, &th, &mean, a).unwrap().predict(x.row(o)).unwrap().mean;
        (after - before).abs()
    };
    let robust = shift(ModelKind::Rcagp, &actions);
    let exact = shift(ModelKind::ExactGp, &ActionMatrix::empty(40));
    assert!(robust < 0.2 * exact, "robust {robust} vs exact {exact}");
}

#[test]
fn suite_reads_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.json");
    std::fs::write(
        &path,
        r#"{"datasets": [{"name": "g", "synthetic": "gist1d", "n": 40}], "models": ["rcagp"], "seeds": [0, 1], "iters": 3}"#,
    )
    .unwrap();
    let cfg = SuiteConfig::from_json_file(&path).unwrap();
    let rows = run_regression_suite(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.error.is_none() && r.mae.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elbo_kl_is_nonnegative(seed in 0u64..5000, n in 3usize..25, i in 1usize..10) {
        let (x, y) = instance(seed, n);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 77);
        let a = ActionMatrix::dense(DMatrix::from_fn(n, i.min(n), |_, _| r.random_range(-1.0..1.0)));
        let th = Hyperparams::new(KernelSpec::isotropic(KernelKind::Rbf, 0.8, 1.2).unwrap(), 0.1, RobustConfig::default()).unwrap();
        let e = elbo(ModelKind::Rcagp, &x, &y, &th, &MeanSpec::sample_mean(&y), &a, ConstantTerm::default()).unwrap();
        prop_assert!(e.kl >= -1e-8);
    }

    #[test]
    fn elbo_ignores_action_column_order(seed in 0u64..5000, n in 4usize..25, i in 2usize..8) {
        let (x, y) = instance(seed, n);
        let i = i.min(n);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 99);
        let a = ActionMatrix::dense(DMatrix::from_fn(n, i, |_, _| r.random_range(-1.0..1.0)));
        let perm: Vec<usize> = (0..i).rev().collect();
        let b = a.permute_columns(&perm).unwrap();
        let th = Hyperparams::new(KernelSpec::isotropic(KernelKind::Matern52, 0.6, 1.0).unwrap(), 0.2, RobustConfig::default()).unwrap();
        let mean = MeanSpec::sample_mean(&y);
        let e1 = elbo(ModelKind::Rcagp, &x, &y, &th, &mean, &a, ConstantTerm::default()).unwrap().total;
        let e2 = elbo(ModelKind::Rcagp, &x, &y, &th, &mean, &b, ConstantTerm::default()).unwrap().total;
        prop_assert!((e1 - e2).abs() <= 1e-9 * (1.0 + e1.abs()));
    }
}
