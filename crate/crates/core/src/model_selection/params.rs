use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::kernels::{KernelKind, KernelSpec};
use crate::robust::RobustConfig;

/// Model hyperparameters θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kernel: KernelSpec,
    pub sigma2: f64,
    pub robust: RobustConfig,
}

impl Hyperparams {
    pub fn new(kernel: KernelSpec, sigma2: f64, robust: RobustConfig) -> Result<Self> {
        let theta = Self {
            kernel,
            sigma2,
            robust,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return usage(format!("noise variance must be positive, got {}", self.sigma2));
        }
        self.robust.validate()
    }

    /// Number of unconstrained parameters.
    pub fn n_params(&self) -> usize {
        self.kernel.lengthscales().len() + 2
    }

    /// `[log ℓ…, log s, log σ²]`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.kernel.lengthscales().iter().map(|l| l.ln()).collect();
        p.push(self.kernel.outputscale().ln());
        p.push(self.sigma2.ln());
        p
    }

    pub fn from_unconstrained(&self, p: &[f64]) -> Result<Self> {
        let nl = self.kernel.lengthscales().len();
        if p.len() != nl + 2 {
            return usage(format!("expected {} parameters, got {}", nl + 2, p.len()));
        }
        let kernel = KernelSpec::new(
            self.kernel.kind(),
            p[..nl].iter().map(|v| v.exp()).collect(),
            p[nl].exp(),
        )?;
        Self::new(kernel, p[nl + 1].exp(), self.robust.clone())
    }

    /// Unit lengthscales and outputscale with the given noise.
    pub fn default_for(kind: KernelKind, dim: usize, ard: bool, sigma2: f64) -> Result<Self> {
        let ls = if ard { vec![1.0; dim] } else { vec![1.0] };
        Self::new(KernelSpec::new(kind, ls, 1.0)?, sigma2, RobustConfig::default())
    }
}
