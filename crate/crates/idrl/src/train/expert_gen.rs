//! Expert training on true rewards and delayed-trajectory collection.

use rand::Rng;

use crate::config::RunConfig;
use crate::data::{ExpertDataset, ExpertHeader, ExpertTrajectory};
use crate::delay::DelayedEnv;
use crate::env::Env;
use crate::policy_opt::AuxDelayAgent;

use super::eval::EvalStats;
use super::online::{OnlineTrainer, RewardSource, TrainOutcome};
use super::rundir::RunDir;
use super::TrainError;

/// Train an agent on the environment's true rewards at the configured
/// delay (the in-repo stand-in for an externally trained expert).
pub fn train_expert(
    cfg: &RunConfig,
    env: &dyn Env,
    run_dir: Option<&RunDir>,
    early_stop: Option<&mut dyn FnMut(usize, &EvalStats) -> bool>,
) -> Result<TrainOutcome, TrainError> {
    let trainer = OnlineTrainer::new(cfg, env, RewardSource::TrueReward)?;
    trainer.run(run_dir, false, early_stop)
}

/// Roll the trained expert for the requested number of trajectories,
/// recording the revealed (delayed) observations and emitted actions.
/// Returns the dataset and the true undiscounted return of each
/// trajectory.
pub fn collect_expert_dataset(
    cfg: &RunConfig,
    env: &dyn Env,
    agent: &AuxDelayAgent,
) -> Result<(ExpertDataset, Vec<f64>), TrainError> {
    let deterministic = cfg.expert.rollout == "deterministic";
    let delta = cfg.delay.delta;
    let spec = env.spec();
    let mut dataset = ExpertDataset::new(ExpertHeader {
        env_id: env.id().to_string(),
        delta,
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
    });
    let mut returns = Vec::with_capacity(cfg.expert.n_traj);
    // a dedicated stream keeps collection independent of training history
    let mut rng = crate::env::rng_from(cfg.run.seed ^ 0xC0117EC7);
    for _ in 0..cfg.expert.n_traj {
        let mut denv = DelayedEnv::new(env, delta, rng.gen());
        let mut observations = vec![env.encode_state(&denv.current().delayed_obs)];
        let mut actions = Vec::new();
        while !denv.is_done() {
            let flat = denv.current().flatten(env);
            let a = agent.act(&flat, &mut rng, deterministic);
            let out = denv.step(&a, rng.gen())?;
            observations.push(env.encode_state(&out.aug.delayed_obs));
            actions.push(env.encode_action(&a));
        }
        returns.push(denv.trace().rewards.iter().sum());
        dataset.push_trajectory(ExpertTrajectory {
            observations,
            actions,
        })?;
    }
    Ok((dataset, returns))
}
