//! Augmented transition records and the delayed-trajectory conversion.

use crate::delay::{AugmentedState, EpisodeTrace};
use crate::env::{Action, Env};

use super::{DataError, ExpertDataset};

/// One n-step training record carrying the full-delay and auxiliary-delay
/// views of the same physical timestep.
///
/// `r_seq` holds the n rewards of the window; it starts out as NaN for
/// learned-reward training and is filled from a frozen reward snapshot at
/// sampling time. `pairs` keeps the intermediate (augmented state, action)
/// pairs the reward model needs for that filling.
#[derive(Debug, Clone)]
pub struct TransitionRecord {
    pub x: AugmentedState,
    pub x_aux: AugmentedState,
    pub action: Action,
    pub r_seq: Vec<f64>,
    pub x_next: AugmentedState,
    pub x_aux_next: AugmentedState,
    pub done: bool,
    /// Number of genuine steps before the episode end (<= n).
    pub n_valid: usize,
    /// (x_{t+i}, a_{t+i}) for i in 0..n_valid.
    pub pairs: Vec<(AugmentedState, Action)>,
    // flattened encodings, cached once at construction
    pub(crate) flat_x: Vec<f64>,
    pub(crate) flat_x_aux: Vec<f64>,
    pub(crate) flat_a: Vec<f64>,
    pub(crate) flat_x_next: Vec<f64>,
    pub(crate) flat_x_aux_next: Vec<f64>,
    pub(crate) flat_pairs: Vec<Vec<f64>>,
}

/// Reward lookup for filling `r_seq`, typically a frozen discriminator.
pub type RewardFn<'a> = dyn Fn(&AugmentedState, &Action, &[f64]) -> f64 + 'a;

impl TransitionRecord {
    pub fn flat_x(&self) -> &[f64] {
        &self.flat_x
    }

    pub fn flat_x_aux(&self) -> &[f64] {
        &self.flat_x_aux
    }

    pub fn flat_action(&self) -> &[f64] {
        &self.flat_a
    }

    pub fn flat_x_next(&self) -> &[f64] {
        &self.flat_x_next
    }

    pub fn flat_x_aux_next(&self) -> &[f64] {
        &self.flat_x_aux_next
    }

    /// Fill the reward sequence from a reward function evaluated on the
    /// stored (x, a) pairs; slots beyond the episode end stay zero.
    pub fn fill_rewards(&mut self, f: &RewardFn) {
        let n = self.r_seq.len();
        for i in 0..n {
            self.r_seq[i] = if i < self.n_valid {
                f(&self.pairs[i].0, &self.pairs[i].1, &self.flat_pairs[i])
            } else {
                0.0
            };
        }
    }

    /// Flattened (x_{t+i}, a_{t+i}) input for reward slot `i`.
    pub fn pairs_flat_slot(&self, i: usize) -> &[f64] {
        &self.flat_pairs[i]
    }

    /// Fixed-width numeric row for checkpoint serialization; layout is
    /// x | x_aux | a | r_seq | x_next | x_aux_next | done | n_valid | pairs.
    pub fn to_flat_row(&self) -> Vec<f64> {
        let n = self.r_seq.len();
        let pair_w = self.flat_x.len() + self.flat_a.len();
        let mut out = Vec::with_capacity(
            2 * self.flat_x.len() + 2 * self.flat_x_aux.len() + self.flat_a.len() + n + 2 + n * pair_w,
        );
        out.extend(&self.flat_x);
        out.extend(&self.flat_x_aux);
        out.extend(&self.flat_a);
        out.extend(&self.r_seq);
        out.extend(&self.flat_x_next);
        out.extend(&self.flat_x_aux_next);
        out.push(if self.done { 1.0 } else { 0.0 });
        out.push(self.n_valid as f64);
        for i in 0..n {
            if i < self.n_valid {
                out.extend(&self.flat_pairs[i]);
            } else {
                out.extend(std::iter::repeat(0.0).take(pair_w));
            }
        }
        out
    }

    /// Inverse of `to_flat_row`; structured views are recovered through
    /// the environment's decoders.
    pub fn from_flat_row(
        env: &dyn Env,
        delta: usize,
        delta_aux: usize,
        nstep: usize,
        row: &[f64],
    ) -> Result<TransitionRecord, crate::env::EnvError> {
        let spec = env.spec();
        let dx = spec.state_dim + delta * spec.action_dim;
        let dxa = spec.state_dim + delta_aux * spec.action_dim;
        let da = spec.action_dim;
        let mut at = 0usize;
        let mut take = |w: usize| {
            let slice = row[at..at + w].to_vec();
            at += w;
            slice
        };
        let flat_x = take(dx);
        let flat_x_aux = take(dxa);
        let flat_a = take(da);
        let r_seq = take(nstep);
        let flat_x_next = take(dx);
        let flat_x_aux_next = take(dxa);
        let done = take(1)[0] != 0.0;
        let n_valid = take(1)[0] as usize;
        let x = AugmentedState::unflatten(env, &flat_x, delta)?;
        let x_aux = AugmentedState::unflatten(env, &flat_x_aux, delta_aux)?;
        let action = env.decode_action(&flat_a)?;
        let x_next = AugmentedState::unflatten(env, &flat_x_next, delta)?;
        let x_aux_next = AugmentedState::unflatten(env, &flat_x_aux_next, delta_aux)?;
        let mut pairs = Vec::with_capacity(n_valid);
        let mut flat_pairs = Vec::with_capacity(n_valid);
        for i in 0..nstep {
            let flat = take(dx + da);
            if i < n_valid {
                let xi = AugmentedState::unflatten(env, &flat[..dx], delta)?;
                let ai = env.decode_action(&flat[dx..])?;
                pairs.push((xi, ai));
                flat_pairs.push(flat);
            }
        }
        Ok(TransitionRecord {
            x,
            x_aux,
            action,
            r_seq,
            x_next,
            x_aux_next,
            done,
            n_valid,
            pairs,
            flat_x,
            flat_x_aux,
            flat_a,
            flat_x_next,
            flat_x_aux_next,
            flat_pairs,
        })
    }
}

/// Build n-step records for every timestep of an episode.
///
/// `trace` holds the true states s_0..s_H and actions a_0..a_{H-1}; expert
/// datasets only reveal states up to s_{H-delta}, which callers signal via
/// `known_states` (the number of leading genuine entries in
/// `trace.states`). Beyond it, augmented views clamp to the last known
/// state and the affected records are marked done so the bootstrap never
/// reads them.
///
/// When `trace.rewards` are finite they seed `r_seq` directly (true-reward
/// training); NaN rewards leave `r_seq` as NaN for lazy filling.
pub fn records_from_trace(
    trace: &EpisodeTrace,
    env: &dyn Env,
    delta: usize,
    delta_aux: usize,
    nstep: usize,
    known_states: usize,
) -> Vec<TransitionRecord> {
    assert!(delta_aux <= delta, "auxiliary delay must not exceed delay");
    assert!(nstep >= 1);
    let horizon = trace.len();
    let zero = env.zero_action();

    // clamp unknown tail states to the last known one
    let clamp_idx = |u: usize| u.min(known_states.saturating_sub(1));
    let aug_at = |t: usize, d: usize| -> AugmentedState {
        let obs = if t >= d {
            trace.states[clamp_idx(t - d)].clone()
        } else {
            trace.states[0].clone()
        };
        let mut window = Vec::with_capacity(d);
        for i in 0..d {
            let idx = t as isize - d as isize + i as isize;
            if idx < 0 {
                window.push(zero.clone());
            } else {
                window.push(trace.actions[idx as usize].clone());
            }
        }
        AugmentedState {
            delayed_obs: obs,
            window,
        }
    };

    // largest time whose auxiliary view uses only known states
    let aux_known_until = (known_states - 1) + delta_aux;

    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let n_valid = nstep.min(horizon - t);
        let done = t + nstep >= horizon || t + nstep > aux_known_until;
        let t_next = (t + nstep).min(horizon);
        let x = aug_at(t, delta);
        let x_aux = aug_at(t, delta_aux);
        let x_next = aug_at(t_next, delta);
        let x_aux_next = aug_at(t_next, delta_aux);
        let action = trace.actions[t].clone();

        let mut r_seq = vec![f64::NAN; nstep];
        if trace.rewards.iter().take(horizon).all(|r| r.is_finite()) {
            for (i, slot) in r_seq.iter_mut().enumerate() {
                *slot = if i < n_valid { trace.rewards[t + i] } else { 0.0 };
            }
        }

        let mut pairs = Vec::with_capacity(n_valid);
        let mut flat_pairs = Vec::with_capacity(n_valid);
        for i in 0..n_valid {
            let xi = aug_at(t + i, delta);
            let ai = trace.actions[t + i].clone();
            let mut flat = xi.flatten(env);
            flat.extend(env.encode_action(&ai));
            pairs.push((xi, ai));
            flat_pairs.push(flat);
        }

        let flat_x = x.flatten(env);
        let flat_x_aux = x_aux.flatten(env);
        let flat_a = env.encode_action(&action);
        let flat_x_next = x_next.flatten(env);
        let flat_x_aux_next = x_aux_next.flatten(env);
        out.push(TransitionRecord {
            x,
            x_aux,
            action,
            r_seq,
            x_next,
            x_aux_next,
            done,
            n_valid,
            pairs,
            flat_x,
            flat_x_aux,
            flat_a,
            flat_x_next,
            flat_x_aux_next,
            flat_pairs,
        });
    }
    out
}

/// Convert a delayed expert dataset into augmented records (the offline
/// half of the training loop). The dataset's delay must equal the
/// configured one; rewards are unknown and stay NaN.
pub fn augment_expert(
    dataset: &ExpertDataset,
    env: &dyn Env,
    delta: usize,
    delta_aux: usize,
    nstep: usize,
) -> Result<Vec<TransitionRecord>, DataError> {
    if dataset.header.delta != delta {
        return Err(DataError::DeltaMismatch {
            dataset: dataset.header.delta,
            config: delta,
        });
    }
    let spec = env.spec();
    if dataset.header.state_dim != spec.state_dim {
        return Err(DataError::DimMismatch {
            field: "state_dim",
            expected: spec.state_dim,
            got: dataset.header.state_dim,
        });
    }
    if dataset.header.action_dim != spec.action_dim {
        return Err(DataError::DimMismatch {
            field: "action_dim",
            expected: spec.action_dim,
            got: dataset.header.action_dim,
        });
    }
    let mut out = Vec::new();
    for traj in &dataset.trajectories {
        let horizon = traj.actions.len();
        // the revealed sequence o_t = s_{t-delta} (padded): true states are
        // the revealed observations shifted left by delta
        let mut states = Vec::with_capacity(horizon + 1);
        let known = horizon + 1 - delta.min(horizon);
        for u in 0..known {
            let frame = &traj.observations[(u + delta).min(horizon)];
            states.push(env.decode_state(frame).map_err(|e| DataError::Invalid(e.to_string()))?);
        }
        // pad the unknown tail by repeating the last known state
        let last = states.last().cloned().ok_or(DataError::Empty)?;
        while states.len() < horizon + 1 {
            states.push(last.clone());
        }
        let mut actions = Vec::with_capacity(horizon);
        for frame in &traj.actions {
            actions.push(env.decode_action(frame).map_err(|e| DataError::Invalid(e.to_string()))?);
        }
        let trace = EpisodeTrace {
            states,
            actions,
            rewards: vec![f64::NAN; horizon],
        };
        out.extend(records_from_trace(
            &trace, env, delta, delta_aux, nstep, known,
        ));
    }
    Ok(out)
}
