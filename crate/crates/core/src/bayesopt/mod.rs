//! Bayesian optimization with the expected utility lower bound: a softplus
//! improvement utility, joint query/model ascent and a contamination-aware loop.

mod acquire;
mod functions;
mod run;
mod utility;

pub use acquire::{eulbo, propose_batch, AcqConfig, BoProblem, Proposal};
pub use functions::{test_function, TestFunction};
pub use run::{bo_loop, BoConfig, BoHistory, BoRecord, BoTask, ExpertMode};
pub use utility::{expected_log_utility, softplus, softplus_utility, BaseSamples};
