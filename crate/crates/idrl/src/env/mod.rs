//! Environment abstraction and the native delay-free toy environments.
//!
//! Environments are pure transition kernels: `reset` and `step` take an
//! explicit seed and never touch hidden global randomness, so every rollout
//! in the crate is reproducible from its seed alone.

mod pendulum;
mod pointmass;
mod tabular;

pub use pendulum::PendulumEnv;
pub use pointmass::PointMassEnv;
pub use tabular::{chain_mdp, grid5_mdp, TabularEnv, TabularMdp};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action has dimension {got}, environment expects {expected}")]
    ActionShape { expected: usize, got: usize },
    #[error("action kind mismatch: environment expects {expected}")]
    ActionKindMismatch { expected: &'static str },
    #[error("state has dimension {got}, environment expects {expected}")]
    StateShape { expected: usize, got: usize },
    #[error("discrete action index {index} out of range (n_actions = {n})")]
    ActionIndex { index: usize, n: usize },
    #[error("invalid environment definition: {0}")]
    Invalid(String),
}

/// Action space description.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    Discrete { n: usize },
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionKind {
    pub fn dim(&self) -> usize {
        match self {
            ActionKind::Discrete { n } => *n,
            ActionKind::Continuous { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionKind::Discrete { .. })
    }
}

/// Static shape and scale information for an environment.
///
/// `state_dim` and `action_dim` are the widths of the encoded state and
/// action vectors (one-hot for tabular environments); `r_max` bounds the
/// absolute reward over all reachable state-action pairs.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_kind: ActionKind,
    pub horizon: usize,
    pub gamma: f64,
    pub r_max: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(EnvError::Invalid("zero state or action dimension".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::Invalid("horizon must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EnvError::Invalid(format!(
                "gamma {} must lie strictly inside (0,1)",
                self.gamma
            )));
        }
        if !(self.r_max > 0.0) {
            return Err(EnvError::Invalid("r_max must be positive".into()));
        }
        Ok(())
    }
}

/// Environment state: a tabular index or a real-valued vector.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Discrete(usize),
    Vector(Vec<f64>),
}

impl State {
    pub fn index(&self) -> usize {
        match self {
            State::Discrete(i) => *i,
            State::Vector(_) => panic!("vector state has no index"),
        }
    }

    pub fn as_vec(&self) -> &[f64] {
        match self {
            State::Vector(v) => v,
            State::Discrete(_) => panic!("discrete state has no raw vector"),
        }
    }
}

/// Action: a discrete index or a real-valued vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Vector(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> usize {
        match self {
            Action::Discrete(i) => *i,
            Action::Vector(_) => panic!("vector action has no index"),
        }
    }
}

/// Result of one delay-free transition.
#[derive(Debug, Clone)]
pub struct Step {
    pub next_state: State,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipschitzSource {
    /// Computed exactly by enumeration over a tabular model.
    Exact,
    /// Declared analytically for a continuous environment.
    Declared,
}

/// Time-Lipschitz constant of the dynamics and Lipschitz constant of the
/// reward, both under the environment's 1-D state embedding metric.
#[derive(Debug, Clone, Copy)]
pub struct Lipschitz {
    pub l_t: f64,
    pub l_r: f64,
    pub source: LipschitzSource,
}

/// A delay-free environment with seeded, replayable randomness.
///
/// `reset` and `step` are pure functions of their arguments: calling them
/// twice with the same inputs yields bitwise-identical results.
pub trait Env {
    fn spec(&self) -> &EnvSpec;

    /// Draw an initial state from the initial distribution under `seed`.
    fn reset(&self, seed: u64) -> State;

    /// One transition. Randomness comes only from `noise_seed`.
    fn step(&self, state: &State, action: &Action, noise_seed: u64) -> Result<Step, EnvError>;

    /// Reward of a state-action pair (no noise enters the reward).
    fn reward(&self, state: &State, action: &Action) -> f64;

    /// Lipschitz constants, exact for tabular models and declared for
    /// continuous ones; `None` when unavailable.
    fn lipschitz_constants(&self) -> Option<Lipschitz>;

    /// The padding action used at episode starts.
    fn zero_action(&self) -> Action;

    fn encode_state(&self, s: &State) -> Vec<f64>;
    fn encode_action(&self, a: &Action) -> Vec<f64>;
    fn decode_state(&self, frame: &[f64]) -> Result<State, EnvError>;
    fn decode_action(&self, frame: &[f64]) -> Result<Action, EnvError>;

    fn random_action(&self, rng: &mut ChaCha8Rng) -> Action {
        match &self.spec().action_kind {
            ActionKind::Discrete { n } => Action::Discrete(rng.gen_range(0..*n)),
            ActionKind::Continuous { low, high } => {
                let v = low
                    .iter()
                    .zip(high)
                    .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                    .collect();
                Action::Vector(v)
            }
        }
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        None
    }

    /// Identifier used in expert-dataset headers and run configs.
    fn id(&self) -> &str;
}

/// Validate an action against a spec, returning a diagnostic on mismatch.
pub fn check_action(spec: &EnvSpec, action: &Action) -> Result<(), EnvError> {
    match (&spec.action_kind, action) {
        (ActionKind::Discrete { n }, Action::Discrete(i)) => {
            if *i >= *n {
                Err(EnvError::ActionIndex { index: *i, n: *n })
            } else {
                Ok(())
            }
        }
        (ActionKind::Continuous { low, .. }, Action::Vector(v)) => {
            if v.len() != low.len() {
                Err(EnvError::ActionShape {
                    expected: low.len(),
                    got: v.len(),
                })
            } else {
                Ok(())
            }
        }
        (ActionKind::Discrete { .. }, _) => Err(EnvError::ActionKindMismatch {
            expected: "a discrete action index",
        }),
        (ActionKind::Continuous { .. }, _) => Err(EnvError::ActionKindMismatch {
            expected: "a continuous action vector",
        }),
    }
}

/// Clamp a continuous action into the box before dynamics see it.
pub fn clamp_action(kind: &ActionKind, v: &[f64]) -> Vec<f64> {
    match kind {
        ActionKind::Continuous { low, high } => v
            .iter()
            .zip(low.iter().zip(high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect(),
        ActionKind::Discrete { .. } => v.to_vec(),
    }
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One-hot encode an index into a vector of the given width.
pub fn one_hot(index: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[index] = 1.0;
    v
}

/// Inverse of `one_hot`: index of the (strictly) largest entry.
pub fn argmax(frame: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in frame.iter().enumerate() {
        if x > frame[best] {
            best = i;
        }
    }
    best
}
