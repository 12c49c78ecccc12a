//! Experiment orchestration: interleaved adversarial training, expert
//! generation, the behavior-cloning baseline, and run-directory plumbing.

mod bc;
mod eval;
mod expert_gen;
mod metrics;
mod online;
mod rundir;

pub use bc::{train_bc, BcInputMode, BcPolicy};
pub use eval::{discrete_occupancy, evaluate_with, occupancy_tv, EvalStats, OccKey};
pub use expert_gen::{collect_expert_dataset, train_expert};
pub use metrics::{metrics_to_csv, parse_metrics_csv, MetricsRow, METRICS_HEADER};
pub use online::{OnlineTrainer, RewardSource, TrainOutcome};
pub use rundir::RunDir;

use thiserror::Error;

use crate::config::RunConfig;
use crate::data::{augment_expert, DataError, ExpertDataset};
use crate::env::Env;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Delay(#[from] crate::delay::DelayError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
    #[error("non-finite {what} at step {step}; diagnostic checkpoint written")]
    NonFinite { what: String, step: usize },
}

/// Validate an expert dataset against the run configuration before
/// training starts.
pub fn validate_expert_dataset(
    cfg: &RunConfig,
    env: &dyn Env,
    dataset: &ExpertDataset,
) -> Result<(), TrainError> {
    if dataset.header.delta != cfg.delay.delta {
        return Err(DataError::DeltaMismatch {
            dataset: dataset.header.delta,
            config: cfg.delay.delta,
        }
        .into());
    }
    if dataset.header.env_id != env.id() {
        return Err(DataError::EnvMismatch {
            dataset: dataset.header.env_id.clone(),
            config: env.id().to_string(),
        }
        .into());
    }
    if dataset.trajectories.is_empty() {
        return Err(DataError::Empty.into());
    }
    Ok(())
}

/// Adversarial imitation from a delayed expert dataset: one discriminator
/// update and one policy-optimization iteration per environment step.
pub fn train_idrl(
    cfg: &RunConfig,
    env: &dyn Env,
    dataset: &ExpertDataset,
    run_dir: Option<&RunDir>,
    resume: bool,
    early_stop: Option<&mut dyn FnMut(usize, &EvalStats) -> bool>,
) -> Result<TrainOutcome, TrainError> {
    validate_expert_dataset(cfg, env, dataset)?;
    let expert_records = augment_expert(
        dataset,
        env,
        cfg.delay.delta,
        cfg.delta_aux(),
        cfg.nstep(),
    )?;
    let trainer = OnlineTrainer::new(
        cfg,
        env,
        RewardSource::Adversarial {
            expert_records: &expert_records,
        },
    )?;
    trainer.run(run_dir, resume, early_stop)
}
