//! Inverse reinforcement learning under constant observation delay.
//!
//! The crate bundles three things: native toy environments wrapped into
//! delay-augmented MDPs, an adversarial reward learner driven by an
//! auxiliary-delay soft actor-critic, and exact certifiers for the
//! Lipschitz performance bounds that justify learning on augmented states
//! instead of raw delayed observations.

pub mod config;
pub mod data;
pub mod delay;
pub mod disc;
pub mod env;
pub mod nn;
pub mod policy_opt;
pub mod theory;
pub mod train;
