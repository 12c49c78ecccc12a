//! Evaluation rollouts in the true delayed environment, and empirical
//! occupancy measurement for tabular tasks.

use std::collections::HashMap;

use rand::Rng;

use crate::delay::{AugmentedState, DelayedEnv};
use crate::env::{Action, Env};

#[derive(Debug, Clone, Copy)]
pub struct EvalStats {
    /// Mean undiscounted true return.
    pub mean: f64,
    pub std: f64,
    /// Mean discounted true return (environment gamma).
    pub disc_mean: f64,
}

/// Roll `episodes` episodes with the given action rule and report true
/// returns computed from the simulator-side trace.
pub fn evaluate_with(
    env: &dyn Env,
    delta: usize,
    episodes: usize,
    seed: u64,
    mut act: impl FnMut(&AugmentedState) -> Action,
) -> EvalStats {
    let gamma = env.spec().gamma;
    let mut rng = crate::env::rng_from(seed);
    let mut returns = Vec::with_capacity(episodes);
    let mut disc_returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut denv = DelayedEnv::new(env, delta, rng.gen());
        while !denv.is_done() {
            let a = act(denv.current());
            denv.step(&a, rng.gen()).expect("episode active");
        }
        let trace = denv.trace();
        let total: f64 = trace.rewards.iter().sum();
        let mut disc = 0.0;
        let mut w = 1.0;
        for &r in &trace.rewards {
            disc += w * r;
            w *= gamma;
        }
        returns.push(total);
        disc_returns.push(disc);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / episodes as f64;
    let disc_mean = disc_returns.iter().sum::<f64>() / episodes as f64;
    EvalStats {
        mean,
        std: var.sqrt(),
        disc_mean,
    }
}

/// Occupancy key for tabular delayed tasks: observation index, window
/// action indices, chosen action index.
pub type OccKey = (usize, Vec<usize>, usize);

/// Empirical (augmented state, action) visit frequencies over roughly
/// `total_steps` environment steps.
pub fn discrete_occupancy(
    env: &dyn Env,
    delta: usize,
    total_steps: usize,
    seed: u64,
    mut act: impl FnMut(&AugmentedState, &mut rand_chacha::ChaCha8Rng) -> Action,
) -> HashMap<OccKey, f64> {
    let mut rng = crate::env::rng_from(seed);
    let mut counts: HashMap<OccKey, f64> = HashMap::new();
    let mut steps = 0usize;
    while steps < total_steps {
        let mut denv = DelayedEnv::new(env, delta, rng.gen());
        while !denv.is_done() && steps < total_steps {
            let x = denv.current().clone();
            let a = act(&x, &mut rng);
            let key = (
                x.delayed_obs.index(),
                x.window.iter().map(|w| w.index()).collect(),
                a.index(),
            );
            *counts.entry(key).or_insert(0.0) += 1.0;
            denv.step(&a, rng.gen()).expect("episode active");
            steps += 1;
        }
    }
    for v in counts.values_mut() {
        *v /= steps as f64;
    }
    counts
}

/// Total-variation distance between two occupancy tables.
pub fn occupancy_tv(a: &HashMap<OccKey, f64>, b: &HashMap<OccKey, f64>) -> f64 {
    let mut keys: Vec<&OccKey> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}
