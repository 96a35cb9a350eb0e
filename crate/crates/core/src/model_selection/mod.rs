//! Closed-form ELBO and gradient-based hyperparameter search.

pub(crate) mod elbo;
mod optimize;
mod params;

pub use elbo::{
    constant_term, elbo, elbo_action_grad, elbo_grad, fd_gradient, fd_gradient_with_step, ConstantTerm, ElboBreakdown,
};
pub use optimize::{optimize_hyperparams, Adam, OptConfig, OptResult};
pub use params::Hyperparams;
