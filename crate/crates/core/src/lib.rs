//! Robust computation-aware Gaussian processes.
//!
//! The crate provides exact, outlier-robust, computation-aware and robust
//! computation-aware GP posteriors, ELBO-based model selection, a batch
//! Bayesian-optimization loop, an expert-guided mean prior and numerical
//! diagnostics for robustness and approximation error.

pub mod bayesopt;
pub mod diagnostics;
pub mod error;
pub mod expert;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod model_selection;
pub mod points;
pub mod posterior;
pub mod robust;

pub use error::{Error, Result};
pub use bayesopt::{bo_loop, BoConfig, BoHistory, TestFunction};
pub use expert::{build_expert_prior, ExpertConfig, ExpertFeedback, ExpertPriorTable, ExpertWeighting};
pub use harness::{ContaminationSpec, Dataset, Protocol, RunResult};
pub use kernels::{KernelKind, KernelSpec, MeanSpec};
pub use model_selection::Hyperparams;
pub use points::Points;
pub use posterior::{
    build_actions, fit, ActionKind, ActionMatrix, ActionParam, ModelKind, PosteriorState, PredictiveDist,
};
pub use robust::{build_weighted_noise, LearningRate, RobustConfig, WeightedNoise};
