//! Minimal reverse-mode differentiation with a second-pass capability,
//! MLP layers, stochastic policy heads, Adam, and binary checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod fdcheck;
pub mod mlp;
pub mod policy;
pub mod tape;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use mlp::{grad_input_penalty, grad_input_penalty_batch, grad_params, Mlp, MlpVars};
pub use policy::{CategoricalPolicyHead, GaussianPolicyHead, PolicyHead};
pub use tape::{Arr, Tape, Var};
