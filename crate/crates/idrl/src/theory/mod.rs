//! Executable verification of the delay bounds: Wasserstein machinery,
//! Lipschitz estimation, exact value computation on augmented tabular
//! MDPs, and the three bound certifiers.

mod augmented;
mod certify;
mod w1;

pub use augmented::{AugmentedSpace, ObsPolicyTable, PolicyTable};
pub use certify::{
    certificates_csv, certificates_summary_json, certify_belief_bound, certify_perf_bound,
    certify_reward_bound, certify_reward_bound_mc, estimate_mlp_state_lipschitz, BoundCertificate,
    BoundKind,
};
pub use w1::w1_discrete;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("distribution is not normalized: mass sums to {0}")]
    NotNormalized(f64),
    #[error("distribution and coordinate lengths differ: {p} vs {coords}")]
    LengthMismatch { p: usize, coords: usize },
    #[error("negative probability mass {0}")]
    NegativeMass(f64),
    #[error("augmented state space too large: {size} states exceeds the {limit} limit")]
    SpaceTooLarge { size: usize, limit: usize },
    #[error("value iteration failed to reach residual {target} in {iters} iterations")]
    NoConvergence { target: f64, iters: usize },
}
