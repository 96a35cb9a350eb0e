//! Stationary covariance functions, Gram matrices and prior mean functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::expert::ExpertPriorTable;
use crate::points::Points;

/// Relative diagonal jitter added to training Gram matrices before factorization.
pub const JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    Matern52,
    Rbf,
}

impl KernelKind {
    /// Correlation as a function of the squared scaled distance.
    #[inline]
    pub fn profile(self, r2: f64) -> f64 {
        match self {
            KernelKind::Rbf => (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let r = (5.0 * r2).sqrt();
                (1.0 + r + r * r / 3.0) * (-r).exp()
            }
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matern52" | "matern" => Ok(KernelKind::Matern52),
            "rbf" | "se" => Ok(KernelKind::Rbf),
            other => usage(format!("unknown kernel `{other}`")),
        }
    }
}

/// Kernel family with (possibly per-dimension) lengthscales and an outputscale.
///
/// A single lengthscale is shared by every input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    kind: KernelKind,
    lengthscales: Vec<f64>,
    outputscale: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, lengthscales: Vec<f64>, outputscale: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return usage("at least one lengthscale is required");
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return usage(format!("lengthscales must be positive, got {lengthscales:?}"));
        }
        if !(outputscale.is_finite() && outputscale > 0.0) {
            return usage(format!("outputscale must be positive, got {outputscale}"));
        }
        Ok(Self {
            kind,
            lengthscales,
            outputscale,
        })
    }

    pub fn isotropic(kind: KernelKind, lengthscale: f64, outputscale: f64) -> Result<Self> {
        Self::new(kind, vec![lengthscale], outputscale)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn outputscale(&self) -> f64 {
        self.outputscale
    }

    pub fn is_ard(&self) -> bool {
        self.lengthscales.len() > 1
    }

    /// Diagonal jitter for this kernel's Gram matrices.
    pub fn jitter(&self) -> f64 {
        JITTER * self.outputscale
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() == 1 || self.lengthscales.len() == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.lengthscales.len(),
                got: dim,
            })
        }
    }

    #[inline]
    fn lengthscale(&self, k: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[k]
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        self.check_dim(a.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            let d = (x - y) / self.lengthscale(k);
            r2 += d * d;
        }
        self.outputscale * self.kind.profile(r2)
    }

    /// Points divided by their lengthscales, so that distances between
    /// scaled points feed [`KernelSpec::eval_scaled`] directly.
    pub(crate) fn scale(&self, x: &Points) -> Points {
        let dim = x.dim();
        let data = x
            .as_slice()
            .iter()
            .enumerate()
            .map(|(idx, v)| v / self.lengthscale(idx % dim))
            .collect();
        Points::new(data, dim).expect("same shape as input")
    }

    #[inline]
    pub(crate) fn eval_scaled(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.outputscale * self.kind.profile(r2)
    }

    /// Cross-covariance matrix `[k(aⱼ, bₗ)]`.
    pub fn gram(&self, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: b.dim(),
            });
        }
        self.check_dim(a.dim())?;
        let sa = self.scale(a);
        let sb = self.scale(b);
        Ok(DMatrix::from_fn(a.len(), b.len(), |j, l| {
            self.eval_scaled(sa.row(j), sb.row(l))
        }))
    }

    /// Symmetric Gram matrix of a point set (no jitter).
    pub fn gram_sym(&self, a: &Points) -> Result<DMatrix<f64>> {
        self.check_dim(a.dim())?;
        let sa = self.scale(a);
        let n = a.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            k[(j, j)] = self.outputscale;
            for l in 0..j {
                let v = self.eval_scaled(sa.row(j), sa.row(l));
                k[(j, l)] = v;
                k[(l, j)] = v;
            }
        }
        Ok(k)
    }

    /// Training Gram matrix with the diagonal jitter applied.
    pub fn train_gram(&self, a: &Points) -> Result<DMatrix<f64>> {
        let mut k = self.gram_sym(a)?;
        let jitter = self.jitter();
        for j in 0..a.len() {
            k[(j, j)] += jitter;
        }
        Ok(k)
    }

    /// The column `k(X, x)`.
    pub fn cross(&self, xs: &Points, x: &[f64]) -> Result<DVector<f64>> {
        if xs.dim() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.dim(),
                got: x.len(),
            });
        }
        self.check_dim(x.len())?;
        Ok(DVector::from_iterator(
            xs.len(),
            xs.rows().map(|r| self.eval_unchecked(r, x)),
        ))
    }
}

/// Prior mean function.
#[derive(Clone, Debug)]
pub enum MeanSpec {
    Constant(f64),
    ExpertGuided(Arc<ExpertPriorTable>),
}

impl Default for MeanSpec {
    fn default() -> Self {
        MeanSpec::Constant(0.0)
    }
}

impl MeanSpec {
    /// Constant mean equal to the sample average of the targets.
    pub fn sample_mean(y: &[f64]) -> Self {
        if y.is_empty() {
            MeanSpec::Constant(0.0)
        } else {
            MeanSpec::Constant(y.iter().sum::<f64>() / y.len() as f64)
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanSpec::Constant(c) => *c,
            MeanSpec::ExpertGuided(table) => table.eval(x),
        }
    }

    pub fn eval_points(&self, xs: &Points) -> DVector<f64> {
        DVector::from_iterator(xs.len(), xs.rows().map(|r| self.eval(r)))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MeanSpec::Constant(c) if *c == 0.0)
    }
}
