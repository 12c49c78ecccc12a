//! Exact enumeration of the delay-augmented state space of a tabular MDP
//! and exact policy evaluation on it (linear solve and value iteration).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::delay::{belief_exact, AugmentedState};
use crate::env::{Action, State, TabularMdp};

use super::TheoryError;

pub const SPACE_LIMIT: usize = 100_000;
pub const VI_TOL: f64 = 1e-10;
pub const VI_MAX_ITERS: usize = 2_000_000;

/// The augmented space S x A^delta with dense indexing: windows are base
/// n_actions numerals, oldest action in the most significant digit.
pub struct AugmentedSpace<'a> {
    pub mdp: &'a TabularMdp,
    pub delta: usize,
    n_windows: usize,
}

impl<'a> AugmentedSpace<'a> {
    pub fn new(mdp: &'a TabularMdp, delta: usize) -> Result<Self, TheoryError> {
        let n_windows = mdp.n_actions().checked_pow(delta as u32).unwrap_or(usize::MAX);
        let size = n_windows.saturating_mul(mdp.n_states());
        if size > SPACE_LIMIT {
            return Err(TheoryError::SpaceTooLarge {
                size,
                limit: SPACE_LIMIT,
            });
        }
        Ok(AugmentedSpace {
            mdp,
            delta,
            n_windows,
        })
    }

    pub fn size(&self) -> usize {
        self.mdp.n_states() * self.n_windows
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn index(&self, s: usize, window: &[usize]) -> usize {
        debug_assert_eq!(window.len(), self.delta);
        let mut w = 0usize;
        for &a in window {
            w = w * self.mdp.n_actions() + a;
        }
        s * self.n_windows + w
    }

    pub fn decode(&self, idx: usize) -> (usize, Vec<usize>) {
        let s = idx / self.n_windows;
        let mut w = idx % self.n_windows;
        let mut window = vec![0usize; self.delta];
        for slot in window.iter_mut().rev() {
            *slot = w % self.mdp.n_actions();
            w /= self.mdp.n_actions();
        }
        (s, window)
    }

    pub fn augmented_state(&self, idx: usize) -> AugmentedState {
        let (s, window) = self.decode(idx);
        AugmentedState {
            delayed_obs: State::Discrete(s),
            window: window.into_iter().map(Action::Discrete).collect(),
        }
    }

    /// Exact belief over true states for an augmented index.
    pub fn belief(&self, idx: usize) -> Vec<f64> {
        belief_exact(self.mdp, &self.augmented_state(idx))
            .exact()
            .to_vec()
    }

    /// Belief expectation of the tabular reward: R_delayed(x, a).
    pub fn delayed_reward(&self, idx: usize, action: usize) -> f64 {
        self.belief(idx)
            .iter()
            .enumerate()
            .map(|(s, &p)| p * self.mdp.reward(s, action))
            .sum()
    }

    /// Reward read off the delayed observation: R(s_obs, a).
    pub fn obs_reward(&self, idx: usize, action: usize) -> f64 {
        let (s, _) = self.decode(idx);
        self.mdp.reward(s, action)
    }

    /// Successor distribution under the delayed transition kernel: the
    /// revealed state advances by the oldest window action (or the fresh
    /// action when delta = 0) and the window shifts deterministically.
    pub fn successors(&self, idx: usize, action: usize) -> Vec<(usize, f64)> {
        let (s, window) = self.decode(idx);
        let drive = if self.delta > 0 { window[0] } else { action };
        let mut next_window = Vec::with_capacity(self.delta);
        if self.delta > 0 {
            next_window.extend_from_slice(&window[1..]);
            next_window.push(action);
        }
        self.mdp
            .transition_row(s, drive)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s2, &p)| (self.index(s2, &next_window), p))
            .collect()
    }

    /// Initial distribution: rho0 on the observation, zero-action padding
    /// in the window.
    pub fn initial_dist(&self) -> Vec<f64> {
        let zero_window = vec![0usize; self.delta];
        let mut out = vec![0.0; self.size()];
        for (s, &p) in self.mdp.initial_dist().iter().enumerate() {
            out[self.index(s, &zero_window)] = p;
        }
        out
    }

    /// Exact policy value by value iteration to `VI_TOL` residual.
    pub fn policy_value_vi(
        &self,
        reward_of: &dyn Fn(usize, usize) -> f64,
        probs_of: &dyn Fn(usize) -> Vec<f64>,
        gamma: f64,
    ) -> Result<Vec<f64>, TheoryError> {
        let n = self.size();
        let trans = self.transition_cache();
        let mut v = vec![0.0; n];
        for _ in 0..VI_MAX_ITERS {
            let mut residual = 0.0f64;
            let mut next = vec![0.0; n];
            for x in 0..n {
                let probs = probs_of(x);
                let mut val = 0.0;
                for (a, &pa) in probs.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let mut q = reward_of(x, a);
                    for &(x2, p) in &trans[x][a] {
                        q += gamma * p * v[x2];
                    }
                    val += pa * q;
                }
                residual = residual.max((val - v[x]).abs());
                next[x] = val;
            }
            v = next;
            if residual <= VI_TOL {
                return Ok(v);
            }
        }
        Err(TheoryError::NoConvergence {
            target: VI_TOL,
            iters: VI_MAX_ITERS,
        })
    }

    /// Exact policy value by a dense linear solve of (I - gamma P) v = r.
    pub fn policy_value_solve(
        &self,
        reward_of: &dyn Fn(usize, usize) -> f64,
        probs_of: &dyn Fn(usize) -> Vec<f64>,
        gamma: f64,
    ) -> Vec<f64> {
        let n = self.size();
        let trans = self.transition_cache();
        let mut a = Array2::<f64>::eye(n);
        let mut b = vec![0.0; n];
        for x in 0..n {
            let probs = probs_of(x);
            for (act, &pa) in probs.iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                b[x] += pa * reward_of(x, act);
                for &(x2, p) in &trans[x][act] {
                    a[(x, x2)] -= gamma * pa * p;
                }
            }
        }
        solve_dense(a, b)
    }

    /// Optimal value and a greedy policy under the given reward.
    pub fn optimal_value_vi(
        &self,
        reward_of: &dyn Fn(usize, usize) -> f64,
        gamma: f64,
    ) -> Result<(Vec<f64>, Vec<usize>), TheoryError> {
        let n = self.size();
        let n_actions = self.mdp.n_actions();
        let trans = self.transition_cache();
        let mut v = vec![0.0; n];
        for _ in 0..VI_MAX_ITERS {
            let mut residual = 0.0f64;
            let mut next = vec![0.0; n];
            for x in 0..n {
                let mut best = f64::NEG_INFINITY;
                for a in 0..n_actions {
                    let mut q = reward_of(x, a);
                    for &(x2, p) in &trans[x][a] {
                        q += gamma * p * v[x2];
                    }
                    best = best.max(q);
                }
                residual = residual.max((best - v[x]).abs());
                next[x] = best;
            }
            v = next;
            if residual <= VI_TOL {
                let mut greedy = vec![0usize; n];
                for x in 0..n {
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..n_actions {
                        let mut q = reward_of(x, a);
                        for &(x2, p) in &trans[x][a] {
                            q += gamma * p * v[x2];
                        }
                        if q > best {
                            best = q;
                            greedy[x] = a;
                        }
                    }
                }
                return Ok((v, greedy));
            }
        }
        Err(TheoryError::NoConvergence {
            target: VI_TOL,
            iters: VI_MAX_ITERS,
        })
    }

    fn transition_cache(&self) -> Vec<Vec<Vec<(usize, f64)>>> {
        let n = self.size();
        let n_actions = self.mdp.n_actions();
        (0..n)
            .map(|x| (0..n_actions).map(|a| self.successors(x, a)).collect())
            .collect()
    }
}

/// Row-stochastic policy over augmented indices.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub probs: Array2<f64>,
}

impl PolicyTable {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn random(n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut probs = Array2::zeros((n_states, n_actions));
        for mut row in probs.rows_mut() {
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen_range(0.05..1.0);
                total += *v;
            }
            row.mapv_inplace(|v| v / total);
        }
        PolicyTable { probs }
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        self.probs.row(x).to_vec()
    }
}

/// Policy conditioned only on the delayed observation.
#[derive(Debug, Clone)]
pub struct ObsPolicyTable(pub PolicyTable);

impl ObsPolicyTable {
    pub fn random(n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> Self {
        ObsPolicyTable(PolicyTable::random(n_states, n_actions, rng))
    }

    /// Lift onto the augmented space by reading the observation component.
    pub fn lifted(&self, space: &AugmentedSpace<'_>, x: usize) -> Vec<f64> {
        let (s, _) = space.decode(x);
        self.0.row(s)
    }
}

/// Dense Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(mut a: Array2<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[(r, col)].abs() > a[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a[(col, c)];
                a[(col, c)] = a[(pivot, c)];
                a[(pivot, c)] = tmp;
            }
            b.swap(col, pivot);
        }
        let diag = a[(col, col)];
        assert!(diag.abs() > 1e-12, "singular system");
        for r in (col + 1)..n {
            let factor = a[(r, col)] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[(r, c)] -= factor * a[(col, c)];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in (r + 1)..n {
            acc -= a[(r, c)] * x[c];
        }
        x[r] = acc / a[(r, r)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{chain_mdp, rng_from};

    #[test]
    fn index_decode_round_trip() {
        let mdp = chain_mdp(4, 0.1);
        let space = AugmentedSpace::new(&mdp, 3).unwrap();
        for idx in 0..space.size() {
            let (s, w) = space.decode(idx);
            assert_eq!(space.index(s, &w), idx);
        }
    }

    #[test]
    fn successors_are_stochastic() {
        let mdp = chain_mdp(5, 0.2);
        let space = AugmentedSpace::new(&mdp, 2).unwrap();
        for x in 0..space.size() {
            for a in 0..2 {
                let total: f64 = space.successors(x, a).iter().map(|&(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn solver_matches_value_iteration() {
        let mdp = chain_mdp(4, 0.15);
        let space = AugmentedSpace::new(&mdp, 2).unwrap();
        let mut rng = rng_from(3);
        let policy = PolicyTable::random(space.size(), 2, &mut rng);
        let reward = |x: usize, a: usize| space.delayed_reward(x, a);
        let probs = |x: usize| policy.row(x);
        let vi = space.policy_value_vi(&reward, &probs, 0.9).unwrap();
        let solved = space.policy_value_solve(&reward, &probs, 0.9);
        for (a, b) in vi.iter().zip(&solved) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn dense_solver_on_known_system() {
        let a = ndarray::arr2(&[[2.0, 1.0], [1.0, 3.0]]);
        let x = solve_dense(a, vec![5.0, 10.0]);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_policy_on_chain_goes_right() {
        let mdp = chain_mdp(5, 0.1);
        let space = AugmentedSpace::new(&mdp, 0).unwrap();
        let reward = |x: usize, a: usize| space.delayed_reward(x, a);
        let (_, greedy) = space.optimal_value_vi(&reward, 0.95).unwrap();
        for (s, &a) in greedy.iter().enumerate() {
            assert_eq!(a, 1, "state {s} should go right");
        }
    }

    #[test]
    fn space_limit_is_enforced() {
        let mdp = chain_mdp(6, 0.1);
        // 6 * 2^20 > 100000
        assert!(matches!(
            AugmentedSpace::new(&mdp, 20),
            Err(TheoryError::SpaceTooLarge { .. })
        ));
    }
}
