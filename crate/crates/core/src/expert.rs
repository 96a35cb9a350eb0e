//! Expert-guided mean prior built from labelled and corrected outliers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::kernels::{KernelKind, KernelSpec};
use crate::points::Points;

/// Neighbor precision used when the neighbor targets have no spread.
pub const TAU_MAX: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertFeedback {
    pub indices: Vec<usize>,
    pub labels: Vec<bool>,
    pub corrections: Vec<f64>,
    pub sigma2_corr: f64,
}

impl ExpertFeedback {
    pub fn new(indices: Vec<usize>, labels: Vec<bool>, corrections: Vec<f64>, sigma2_corr: f64) -> Result<Self> {
        if labels.len() != indices.len() || corrections.len() != indices.len() {
            return usage("feedback indices, labels and corrections differ in length");
        }
        if !(sigma2_corr > 0.0 && sigma2_corr.is_finite()) {
            return usage(format!("sigma2_corr must be positive, got {sigma2_corr}"));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return usage("feedback indices must be unique");
        }
        if corrections.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("expert corrections".into()));
        }
        Ok(Self {
            indices,
            labels,
            corrections,
            sigma2_corr,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Reads a CSV with header `index,label,correction`.
    pub fn from_csv(path: impl AsRef<Path>, sigma2_corr: f64) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut idx, mut lab, mut cor) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let bad = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            idx.push(rec[0].trim().parse::<usize>().map_err(|e| bad(format!("index: {e}")))?);
            lab.push(match rec[1].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(format!("label `{other}` is not binary"))),
            });
            cor.push(rec[2].trim().parse::<f64>().map_err(|e| bad(format!("correction: {e}")))?);
        }
        Self::new(idx, lab, cor, sigma2_corr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpertWeighting {
    /// Each outlier contributes `E[δ]E[μ̄]·l(x, x_o)`.
    Kernel,
    /// Location-free average of `E[δ]E[μ̄]`.
    Constant,
}

#[derive(Clone, Debug)]
pub struct ExpertConfig {
    pub neighbors: usize,
    pub beta_o: f64,
    pub weighting: ExpertWeighting,
    /// Smoothing kernel `l`; `None` picks a unit-scale RBF with the median
    /// heuristic lengthscale.
    pub smoothing: Option<KernelSpec>,
}

impl ExpertConfig {
    pub fn constant_weighting(constant: bool) -> Self {
        Self {
            weighting: if constant { ExpertWeighting::Constant } else { ExpertWeighting::Kernel },
            ..Self::default()
        }
    }
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            neighbors: 3,
            beta_o: 0.0,
            weighting: ExpertWeighting::Kernel,
            smoothing: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertEntry {
    pub x: Vec<f64>,
    pub delta: f64,
    pub mu_bar: f64,
}

#[derive(Clone, Debug)]
pub struct ExpertPriorTable {
    entries: Vec<ExpertEntry>,
    smoothing: KernelSpec,
    weighting: ExpertWeighting,
}

/// `E[δ] = (α + ō)/(α + β + 1)` with `α = |(ŷ − pool mean)/pool std|`.
pub fn label_posterior_mean(y_hat: f64, pool_mean: f64, pool_std: f64, o_bar: bool, beta_o: f64) -> Result<f64> {
    if !(pool_std > 0.0) {
        return usage(format!("pool standard deviation must be positive, got {pool_std}"));
    }
    if !(beta_o >= 0.0) {
        return usage(format!("beta_o must be non-negative, got {beta_o}"));
    }
    let alpha = ((y_hat - pool_mean) / pool_std).abs();
    let o = if o_bar { 1.0 } else { 0.0 };
    let denom = alpha + beta_o + 1.0;
    Ok((alpha + o) / denom)
}

/// Precision-weighted combination of the neighbor mean and the correction.
pub fn correction_posterior_mean(y_bar: f64, neighbor_ys: &[f64], sigma2_corr: f64) -> Result<f64> {
    if neighbor_ys.is_empty() {
        return usage("at least one neighbor is required");
    }
    if !(sigma2_corr > 0.0) {
        return usage(format!("sigma2_corr must be positive, got {sigma2_corr}"));
    }
    let j = neighbor_ys.len() as f64;
    let mu = neighbor_ys.iter().sum::<f64>() / j;
    let tau = if neighbor_ys.len() < 2 {
        TAU_MAX
    } else {
        let var = neighbor_ys.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (j - 1.0);
        if var > 0.0 {
            (1.0 / var).min(TAU_MAX)
        } else {
            TAU_MAX
        }
    };
    let prec = 1.0 / sigma2_corr;
    Ok((tau * mu + prec * y_bar) / (tau + prec))
}

/// Median pairwise Euclidean distance (on at most 500 points).
pub fn median_heuristic_lengthscale(x: &Points) -> f64 {
    let m = x.len().min(500);
    let step = (x.len() / m.max(1)).max(1);
    let rows: Vec<&[f64]> = x.rows().step_by(step).take(m).collect();
    let mut d = Vec::new();
    for a in 0..rows.len() {
        for b in 0..a {
            let s: f64 = rows[a].iter().zip(rows[b]).map(|(u, v)| (u - v) * (u - v)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

pub fn build_expert_prior(
    x: &Points,
    y: &[f64],
    feedback: &ExpertFeedback,
    cfg: &ExpertConfig,
) -> Result<ExpertPriorTable> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if feedback.is_empty() {
        return usage("expert prior needs at least one identified outlier");
    }
    if cfg.neighbors == 0 {
        return usage("neighbor count must be positive");
    }
    if let Some(&bad) = feedback.indices.iter().find(|&&i| i >= x.len()) {
        return usage(format!("outlier index {bad} out of range for {} points", x.len()));
    }
    let smoothing = match &cfg.smoothing {
        Some(k) => k.clone(),
        None => KernelSpec::isotropic(KernelKind::Rbf, median_heuristic_lengthscale(x), 1.0)?,
    };
    smoothing.check_dim(x.dim())?;

    let n = y.len() as f64;
    let pool_mean = y.iter().sum::<f64>() / n;
    let pool_std = if y.len() > 1 {
        (y.iter().map(|v| (v - pool_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let pool_std = if pool_std > 0.0 { pool_std } else { 1.0 };

    let mut is_outlier = vec![false; x.len()];
    for &i in &feedback.indices {
        is_outlier[i] = true;
    }
    let inliers: Vec<usize> = (0..x.len()).filter(|&i| !is_outlier[i]).collect();
    if inliers.is_empty() {
        return usage("expert prior needs at least one inlier");
    }

    let mut entries = Vec::with_capacity(feedback.indices.len());
    for ((&o, &label), &corr) in feedback.indices.iter().zip(&feedback.labels).zip(&feedback.corrections) {
        let xo = x.row(o);
        let mut sims: Vec<(f64, usize)> = inliers
            .iter()
            .map(|&j| (smoothing.eval_unchecked(xo, x.row(j)), j))
            .collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite similarity").then(a.1.cmp(&b.1)));
        let neighbor_ys: Vec<f64> = sims.iter().take(cfg.neighbors).map(|&(_, j)| y[j]).collect();
        entries.push(ExpertEntry {
            x: xo.to_vec(),
            delta: label_posterior_mean(y[o], pool_mean, pool_std, label, cfg.beta_o)?,
            mu_bar: correction_posterior_mean(corr, &neighbor_ys, feedback.sigma2_corr)?,
        });
    }
    Ok(ExpertPriorTable {
        entries,
        smoothing,
        weighting: cfg.weighting,
    })
}

impl ExpertPriorTable {
    /// A table with no outliers; evaluates to zero everywhere.
    pub fn empty(smoothing: KernelSpec) -> Self {
        Self {
            entries: Vec::new(),
            smoothing,
            weighting: ExpertWeighting::Kernel,
        }
    }

    pub fn from_entries(entries: Vec<ExpertEntry>, smoothing: KernelSpec, weighting: ExpertWeighting) -> Self {
        Self {
            entries,
            smoothing,
            weighting,
        }
    }

    pub fn entries(&self) -> &[ExpertEntry] {
        &self.entries
    }

    pub fn smoothing(&self) -> &KernelSpec {
        &self.smoothing
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .entries
            .iter()
            .map(|e| {
                let l = match self.weighting {
                    ExpertWeighting::Kernel => self.smoothing.eval_unchecked(x, &e.x),
                    ExpertWeighting::Constant => 1.0,
                };
                e.delta * e.mu_bar * l
            })
            .sum();
        total / self.entries.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_mean_values() {
        assert_eq!(label_posterior_mean(0.0, 0.0, 1.0, false, 0.0).unwrap(), 0.0);
        assert_eq!(label_posterior_mean(5.0, 1.0, 2.0, true, 0.0).unwrap(), 1.0);
        let v = label_posterior_mean(3.0, 0.0, 1.0, true, 0.5).unwrap();
        assert!((v - 4.0 / 4.5).abs() < 1e-12);
        assert!(label_posterior_mean(0.0, 0.0, 0.0, true, 0.0).is_err());
    }

    #[test]
    fn correction_mean_values() {
        // neighbors {-1, 0, 1}: mean 0, sample variance 1
        let v = correction_posterior_mean(2.0, &[-1.0, 0.0, 1.0], 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let tight = correction_posterior_mean(2.0, &[-1.0, 0.0, 1.0], 1e-12).unwrap();
        assert!((tight - 2.0).abs() < 1e-9);
        let flat = correction_posterior_mean(2.0, &[0.7, 0.7, 0.7], 1.0).unwrap();
        assert!((flat - 0.7).abs() < 2e-6);
    }

    fn line(n: usize) -> (Points, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y = xs.iter().map(|v| (4.0 * v).sin()).collect();
        (Points::from_scalars(&xs), y)
    }

    #[test]
    fn single_outlier_table() {
        let (x, mut y) = line(20);
        y[7] -= 10.0;
        let fb = ExpertFeedback::new(vec![7], vec![true], vec![0.4], 1.0).unwrap();
        let l = KernelSpec::isotropic(KernelKind::Rbf, 0.2, 1.0).unwrap();
        let cfg = ExpertConfig {
            smoothing: Some(l.clone()),
            ..ExpertConfig::default()
        };
        let t = build_expert_prior(&x, &y, &fb, &cfg).unwrap();
        let e = &t.entries()[0];
        assert_eq!(e.delta, 1.0);
        let probe = [0.9];
        let expect = e.mu_bar * l.eval(&probe, x.row(7)).unwrap();
        assert!((t.eval(&probe) - expect).abs() < 1e-14);
    }

    #[test]
    fn perfect_corrections_reproduce_truth() {
        let (x, clean) = line(30);
        let mut y = clean.clone();
        let idx = vec![3, 15, 22];
        for &i in &idx {
            y[i] -= 8.0;
        }
        let corr: Vec<f64> = idx.iter().map(|&i| clean[i]).collect();
        let fb = ExpertFeedback::new(idx.clone(), vec![true; 3], corr, 1e-12).unwrap();
        let t = build_expert_prior(&x, &y, &fb, &ExpertConfig::default()).unwrap();
        for (e, &i) in t.entries().iter().zip(&idx) {
            assert!((e.mu_bar - clean[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_pair_at_midpoint() {
        let l = KernelSpec::isotropic(KernelKind::Rbf, 1.0, 1.0).unwrap();
        let entries = vec![
            ExpertEntry { x: vec![-1.0], delta: 1.0, mu_bar: 2.0 },
            ExpertEntry { x: vec![1.0], delta: 1.0, mu_bar: 2.0 },
        ];
        let t = ExpertPriorTable::from_entries(entries, l.clone(), ExpertWeighting::Kernel);
        let single = 2.0 * l.eval(&[0.0], &[1.0]).unwrap();
        assert!((t.eval(&[0.0]) - single).abs() < 1e-14);
    }

    #[test]
    fn empty_and_far_away() {
        let l = KernelSpec::isotropic(KernelKind::Rbf, 0.1, 1.0).unwrap();
        assert_eq!(ExpertPriorTable::empty(l.clone()).eval(&[3.0]), 0.0);
        let t = ExpertPriorTable::from_entries(
            vec![ExpertEntry { x: vec![0.0], delta: 1.0, mu_bar: 5.0 }],
            l,
            ExpertWeighting::Kernel,
        );
        assert!(t.eval(&[100.0]).abs() < 1e-300);
    }

    #[test]
    fn constant_weighting_ignores_location() {
        let l = KernelSpec::isotropic(KernelKind::Rbf, 0.1, 1.0).unwrap();
        let t = ExpertPriorTable::from_entries(
            vec![
                ExpertEntry { x: vec![0.0], delta: 0.5, mu_bar: 2.0 },
                ExpertEntry { x: vec![1.0], delta: 1.0, mu_bar: 3.0 },
            ],
            l,
            ExpertWeighting::Constant,
        );
        assert!((t.eval(&[50.0]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fewer_inliers_than_neighbors() {
        let x = Points::from_scalars(&[0.0, 1.0, 2.0]);
        let y = [0.0, -9.0, 1.0];
        let fb = ExpertFeedback::new(vec![1], vec![true], vec![0.5], 1.0).unwrap();
        let t = build_expert_prior(&x, &y, &fb, &ExpertConfig::default()).unwrap();
        let expect = correction_posterior_mean(0.5, &[0.0, 1.0], 1.0).unwrap();
        assert!((t.entries()[0].mu_bar - expect).abs() < 1e-14);
    }

    #[test]
    fn invalid_feedback() {
        assert!(ExpertFeedback::new(vec![1, 1], vec![true; 2], vec![0.0; 2], 1.0).is_err());
        assert!(ExpertFeedback::new(vec![1], vec![true; 2], vec![0.0], 1.0).is_err());
        let x = Points::from_scalars(&[0.0, 1.0]);
        let fb = ExpertFeedback::new(vec![5], vec![true], vec![0.0], 1.0).unwrap();
        assert!(build_expert_prior(&x, &[0.0, 1.0], &fb, &ExpertConfig::default()).is_err());
        let none = ExpertFeedback::new(vec![], vec![], vec![], 1.0).unwrap();
        assert!(build_expert_prior(&x, &[0.0, 1.0], &none, &ExpertConfig::default()).is_err());
    }

    #[test]
    fn feedback_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fb.csv");
        std::fs::write(&p, "index,label,correction\n3,1,0.5\n7,0,-1.25\n").unwrap();
        let fb = ExpertFeedback::from_csv(&p, 2.0).unwrap();
        assert_eq!(fb.indices, vec![3, 7]);
        assert_eq!(fb.labels, vec![true, false]);
        assert_eq!(fb.corrections, vec![0.5, -1.25]);
        std::fs::write(&p, "index,label,correction\n3,1,0.5\nx,0,1\n").unwrap();
        match ExpertFeedback::from_csv(&p, 1.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn eval_is_bounded(
            mus in proptest::collection::vec(-5.0f64..5.0, 1..6),
            probe in -4.0f64..4.0,
        ) {
            let l = KernelSpec::isotropic(KernelKind::Rbf, 0.5, 1.0).unwrap();
            let entries: Vec<ExpertEntry> = mus.iter().enumerate()
                .map(|(k, &m)| ExpertEntry { x: vec![k as f64 * 0.7 - 1.0], delta: 1.0, mu_bar: m })
                .collect();
            let bound = mus.iter().fold(0.0f64, |a, m| a.max(m.abs()));
            let t = ExpertPriorTable::from_entries(entries, l, ExpertWeighting::Kernel);
            prop_assert!(t.eval(&[probe]).abs() <= bound + 1e-12);
        }

        #[test]
        fn trust_moves_toward_neighbor_mean(
            ybar in -5.0f64..5.0,
            n1 in -2.0f64..2.0, n2 in -2.0f64..2.0, n3 in -2.0f64..2.0,
            s in 0.01f64..10.0,
        ) {
            let ns = [n1, n2, n3];
            let mu = (n1 + n2 + n3) / 3.0;
            prop_assume!((ybar - mu).abs() > 1e-6);
            prop_assume!(ns.iter().any(|v| (v - mu).abs() > 1e-3));
            let a = correction_posterior_mean(ybar, &ns, s).unwrap();
            let b = correction_posterior_mean(ybar, &ns, s * 2.0).unwrap();
            prop_assert!((b - mu).abs() < (a - mu).abs());
        }

        #[test]
        fn label_mean_monotone_in_alpha(a1 in 0.0f64..10.0, a2 in 0.0f64..10.0) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let f = |a: f64| label_posterior_mean(a, 0.0, 1.0, false, 0.0).unwrap();
            prop_assert!(f(lo) <= f(hi) + 1e-15);
            prop_assert!((label_posterior_mean(lo, 0.0, 1.0, true, 0.0).unwrap() - 1.0).abs() < 1e-15);
        }
    }
}
