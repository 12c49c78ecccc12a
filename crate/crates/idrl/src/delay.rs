//! Constant-delay augmentation of a delay-free environment, plus exact and
//! Monte-Carlo belief machinery over the augmented states.
//!
//! An augmented state is the last revealed observation together with the
//! actions emitted since. At episode start the action window is padded with
//! zero actions and the first `delta` reveals repeat the initial state, so
//! trajectory lengths match the base horizon.

use std::collections::VecDeque;

use ndarray::Array1;
use thiserror::Error;

use crate::env::{Action, Env, EnvError, State, TabularMdp};

#[derive(Debug, Error)]
pub enum DelayError {
    #[error("delayed_step called after the episode finished")]
    EpisodeOver,
    #[error("action window has length {got}, expected the configured delay {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Delayed observation plus the action window emitted since it was current.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub delayed_obs: State,
    pub window: Vec<Action>,
}

impl AugmentedState {
    pub fn delay(&self) -> usize {
        self.window.len()
    }

    /// Concatenated encoding: state vector followed by the window actions
    /// in time order (oldest first).
    pub fn flatten(&self, env: &dyn Env) -> Vec<f64> {
        let mut out = env.encode_state(&self.delayed_obs);
        for a in &self.window {
            out.extend(env.encode_action(a));
        }
        out
    }

    pub fn flat_dim(env: &dyn Env, delta: usize) -> usize {
        env.spec().state_dim + delta * env.spec().action_dim
    }

    /// Inverse of `flatten` through the environment's decoders.
    pub fn unflatten(
        env: &dyn Env,
        flat: &[f64],
        delta: usize,
    ) -> Result<AugmentedState, EnvError> {
        let sd = env.spec().state_dim;
        let ad = env.spec().action_dim;
        if flat.len() != sd + delta * ad {
            return Err(EnvError::StateShape {
                expected: sd + delta * ad,
                got: flat.len(),
            });
        }
        let delayed_obs = env.decode_state(&flat[..sd])?;
        let mut window = Vec::with_capacity(delta);
        for i in 0..delta {
            let from = sd + i * ad;
            window.push(env.decode_action(&flat[from..from + ad])?);
        }
        Ok(AugmentedState {
            delayed_obs,
            window,
        })
    }
}

/// Build an augmented state, checking the window length against the
/// configured delay.
pub fn augment(
    delayed_obs: State,
    window: Vec<Action>,
    delta: usize,
) -> Result<AugmentedState, DelayError> {
    if window.len() != delta {
        return Err(DelayError::WindowLength {
            expected: delta,
            got: window.len(),
        });
    }
    Ok(AugmentedState {
        delayed_obs,
        window,
    })
}

/// True if `next`'s window is `prev`'s window shifted left with `action`
/// appended.
pub fn window_follows(prev: &AugmentedState, action: &Action, next: &AugmentedState) -> bool {
    let d = prev.window.len();
    if next.window.len() != d {
        return false;
    }
    for i in 1..d {
        if prev.window[i] != next.window[i - 1] {
            return false;
        }
    }
    d == 0 || next.window[d - 1] == *action
}

/// Full record of one underlying episode: true states s_0..s_H, actions
/// a_0..a_{H-1}, and the true per-step rewards R(s_t, a_t).
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Copy with the true rewards blanked out; reward-free consumers take
    /// this form so learned-reward paths can never see the environment's
    /// reward by accident.
    pub fn redacted(&self) -> EpisodeTrace {
        EpisodeTrace {
            states: self.states.clone(),
            actions: self.actions.clone(),
            rewards: vec![f64::NAN; self.rewards.len()],
        }
    }

    /// The augmented state at time `t` for an arbitrary delay, using the
    /// episode-start padding conventions (repeat s_0, zero actions).
    pub fn augmented_at(&self, t: usize, delta: usize, zero_action: &Action) -> AugmentedState {
        let obs = if t >= delta {
            self.states[t - delta].clone()
        } else {
            self.states[0].clone()
        };
        let mut window = Vec::with_capacity(delta);
        for i in 0..delta {
            let idx = t as isize - delta as isize + i as isize;
            if idx < 0 {
                window.push(zero_action.clone());
            } else {
                window.push(self.actions[idx as usize].clone());
            }
        }
        AugmentedState {
            delayed_obs: obs,
            window,
        }
    }
}

/// Result of one delayed step.
#[derive(Debug, Clone)]
pub struct DelayedStep {
    pub aug: AugmentedState,
    pub done: bool,
}

/// A delay-free environment wrapped into the constant-delay augmented MDP.
///
/// The pending queue holds the delta yet-unrevealed states (FIFO). The
/// simulator-side episode trace, including true rewards, is available via
/// [`DelayedEnv::trace`]; reward-free consumers use `trace().redacted()`.
pub struct DelayedEnv<'a> {
    env: &'a dyn Env,
    delta: usize,
    pending: VecDeque<State>,
    window: VecDeque<Action>,
    true_state: State,
    current: AugmentedState,
    t: usize,
    done: bool,
    trace: EpisodeTrace,
}

impl<'a> DelayedEnv<'a> {
    pub fn new(env: &'a dyn Env, delta: usize, seed: u64) -> Self {
        let mut d = DelayedEnv {
            env,
            delta,
            pending: VecDeque::new(),
            window: VecDeque::new(),
            true_state: State::Discrete(0),
            current: AugmentedState {
                delayed_obs: State::Discrete(0),
                window: Vec::new(),
            },
            t: 0,
            done: false,
            trace: EpisodeTrace {
                states: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
            },
        };
        d.reset(seed);
        d
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn env(&self) -> &dyn Env {
        self.env
    }

    pub fn reset(&mut self, seed: u64) -> AugmentedState {
        let s0 = self.env.reset(seed);
        self.pending = std::iter::repeat(s0.clone()).take(self.delta).collect();
        self.window = std::iter::repeat(self.env.zero_action())
            .take(self.delta)
            .collect();
        self.true_state = s0.clone();
        self.t = 0;
        self.done = false;
        self.trace = EpisodeTrace {
            states: vec![s0.clone()],
            actions: Vec::new(),
            rewards: Vec::new(),
        };
        self.current = AugmentedState {
            delayed_obs: s0,
            window: self.window.iter().cloned().collect(),
        };
        self.current.clone()
    }

    pub fn current(&self) -> &AugmentedState {
        &self.current
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Simulator-side episode record (true states, actions, true rewards).
    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    /// Advance the true environment one step; reveal the observation from
    /// `delta` steps ago and shift the action window.
    pub fn step(&mut self, action: &Action, noise_seed: u64) -> Result<DelayedStep, DelayError> {
        if self.done {
            return Err(DelayError::EpisodeOver);
        }
        let out = self.env.step(&self.true_state, action, noise_seed)?;
        self.trace.actions.push(action.clone());
        self.trace.rewards.push(out.reward);
        self.trace.states.push(out.next_state.clone());

        self.pending.push_back(out.next_state.clone());
        let revealed = self.pending.pop_front().expect("queue holds delta+1 items");
        if self.delta > 0 {
            self.window.pop_front();
            self.window.push_back(action.clone());
        }
        self.true_state = out.next_state;
        self.t += 1;
        self.done = out.terminal || self.t >= self.env.spec().horizon;
        self.current = AugmentedState {
            delayed_obs: revealed,
            window: self.window.iter().cloned().collect(),
        };
        Ok(DelayedStep {
            aug: self.current.clone(),
            done: self.done,
        })
    }
}

/// Belief over the true current state implied by an augmented state.
#[derive(Debug, Clone)]
pub enum BeliefDist {
    /// Exact probability vector over tabular states.
    Exact(Vec<f64>),
    /// Equally weighted particles for continuous states.
    Particles(Vec<State>),
}

impl BeliefDist {
    pub fn exact(&self) -> &[f64] {
        match self {
            BeliefDist::Exact(p) => p,
            BeliefDist::Particles(_) => panic!("particle belief has no exact vector"),
        }
    }

    /// Total-variation distance between two discrete beliefs; particle sets
    /// over discrete states are histogrammed first.
    pub fn tv_discrete(&self, other: &BeliefDist, n_states: usize) -> f64 {
        let p = self.to_histogram(n_states);
        let q = other.to_histogram(n_states);
        0.5 * p
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    fn to_histogram(&self, n_states: usize) -> Vec<f64> {
        match self {
            BeliefDist::Exact(p) => p.clone(),
            BeliefDist::Particles(ps) => {
                let mut h = vec![0.0; n_states];
                for s in ps {
                    h[s.index()] += 1.0;
                }
                let n = ps.len() as f64;
                for v in &mut h {
                    *v /= n;
                }
                h
            }
        }
    }
}

/// Exact belief: the Dirac at the delayed observation pushed through the
/// recorded actions' transition matrices, oldest action first.
pub fn belief_exact(mdp: &TabularMdp, x: &AugmentedState) -> BeliefDist {
    let mut b = Array1::zeros(mdp.n_states());
    b[x.delayed_obs.index()] = 1.0;
    for a in &x.window {
        b = b.dot(mdp.transition_matrix(a.index()));
    }
    BeliefDist::Exact(b.to_vec())
}

/// Monte-Carlo belief: roll the base dynamics forward through the window
/// actions `n_particles` times.
pub fn belief_mc(
    env: &dyn Env,
    x: &AugmentedState,
    n_particles: usize,
    seed: u64,
) -> Result<BeliefDist, DelayError> {
    assert!(n_particles >= 1);
    let mut rng = crate::env::rng_from(seed);
    let mut particles = Vec::with_capacity(n_particles);
    for _ in 0..n_particles {
        let mut s = x.delayed_obs.clone();
        for a in &x.window {
            use rand::Rng;
            s = env.step(&s, a, rng.gen())?.next_state;
        }
        particles.push(s);
    }
    Ok(BeliefDist::Particles(particles))
}

/// A policy over augmented states with evaluable action probabilities.
pub trait AugPolicy {
    fn action_probs(&self, x: &AugmentedState) -> Vec<f64>;
}

/// Uniform policy over `n` discrete actions.
pub struct UniformPolicy(pub usize);

impl AugPolicy for UniformPolicy {
    fn action_probs(&self, _x: &AugmentedState) -> Vec<f64> {
        vec![1.0 / self.0 as f64; self.0]
    }
}

/// A delayed trajectory over a tabular base MDP: augmented states
/// x_0..x_T interleaved with discrete actions a_0..a_{T-1}.
#[derive(Debug, Clone)]
pub struct DelayedTrajectory {
    pub states: Vec<AugmentedState>,
    pub actions: Vec<usize>,
}

/// Log of the discounted trajectory weight in the delayed MDP, with the
/// discount applied inside the product exactly as defined: log of
/// rho_Delta(x_0) * prod_t gamma^t T_Delta(x_{t+1}|x_t,a_t) pi(a_t|x_t).
///
/// Any zero factor (including a violated Dirac window constraint) yields
/// negative infinity. The weight is not normalized.
pub fn delayed_traj_logprob(
    mdp: &TabularMdp,
    policy: &dyn AugPolicy,
    traj: &DelayedTrajectory,
    gamma: f64,
) -> f64 {
    assert_eq!(traj.states.len(), traj.actions.len() + 1);
    let x0 = &traj.states[0];
    // rho_Delta: initial distribution times Diracs at the zero padding action
    if x0.window.iter().any(|a| a.index() != 0) {
        return f64::NEG_INFINITY;
    }
    let p0 = mdp.initial_dist()[x0.delayed_obs.index()];
    if p0 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut logp = p0.ln();
    for (t, &a) in traj.actions.iter().enumerate() {
        let x = &traj.states[t];
        let x_next = &traj.states[t + 1];
        if !window_follows(x, &Action::Discrete(a), x_next) {
            return f64::NEG_INFINITY;
        }
        // the base transition revealed this step is driven by the oldest
        // window action (or the fresh action when delay is zero)
        let drive = if x.delay() > 0 { x.window[0].index() } else { a };
        let p_t = mdp.transition_row(x.delayed_obs.index(), drive)[x_next.delayed_obs.index()];
        let p_a = policy.action_probs(x)[a];
        if p_t <= 0.0 || p_a <= 0.0 {
            return f64::NEG_INFINITY;
        }
        logp += (t as f64) * gamma.ln() + p_t.ln() + p_a.ln();
    }
    logp
}
