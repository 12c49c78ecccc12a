//! Exact finite MDPs: the oracle substrate for every theory check, plus the
//! tabular toy environments (slippery chain, 5x5 gridworld).

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{
    check_action, one_hot, rng_from, Action, ActionKind, Env, EnvError, EnvSpec, Lipschitz,
    LipschitzSource, State, Step,
};

const ROW_TOL: f64 = 1e-12;

/// A finite MDP held in exact form: per-action row-stochastic transition
/// matrices, a reward table, an initial distribution, and a 1-D embedding
/// of the state indices that makes Wasserstein and Euclidean distances
/// well defined.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// transition[a][(s, s')] = P(s' | s, a)
    transition: Vec<Array2<f64>>,
    /// reward[(s, a)]
    reward: Array2<f64>,
    initial_dist: Array1<f64>,
    /// state index -> real coordinate; defaults to the index itself
    embedding: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Array2<f64>>,
        reward: Array2<f64>,
        initial_dist: Array1<f64>,
        embedding: Option<Vec<f64>>,
    ) -> Result<Self, EnvError> {
        let n_actions = transition.len();
        if n_actions == 0 {
            return Err(EnvError::Invalid("no actions".into()));
        }
        let n_states = transition[0].nrows();
        if n_states == 0 {
            return Err(EnvError::Invalid("no states".into()));
        }
        for (a, t) in transition.iter().enumerate() {
            if t.nrows() != n_states || t.ncols() != n_states {
                return Err(EnvError::Invalid(format!(
                    "transition matrix for action {a} is {}x{}, expected {n_states}x{n_states}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            for s in 0..n_states {
                let row = t.row(s);
                if row.iter().any(|&p| p < 0.0) {
                    return Err(EnvError::Invalid(format!(
                        "negative probability in row ({s}, action {a})"
                    )));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(EnvError::Invalid(format!(
                        "transition row ({s}, action {a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if reward.nrows() != n_states || reward.ncols() != n_actions {
            return Err(EnvError::Invalid(format!(
                "reward table is {}x{}, expected {n_states}x{n_actions}",
                reward.nrows(),
                reward.ncols()
            )));
        }
        if initial_dist.len() != n_states {
            return Err(EnvError::Invalid("initial distribution length mismatch".into()));
        }
        if initial_dist.iter().any(|&p| p < 0.0)
            || (initial_dist.sum() - 1.0).abs() > ROW_TOL
        {
            return Err(EnvError::Invalid("initial distribution is not a probability vector".into()));
        }
        let embedding = embedding.unwrap_or_else(|| (0..n_states).map(|s| s as f64).collect());
        if embedding.len() != n_states {
            return Err(EnvError::Invalid("embedding length mismatch".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist,
            embedding,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition_matrix(&self, action: usize) -> &Array2<f64> {
        &self.transition[action]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> ndarray::ArrayView1<'_, f64> {
        self.transition[action].row(state)
    }

    pub fn reward_table(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[(state, action)]
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, &r| m.max(r.abs()))
    }

    /// Sample an index from a probability row by inverse-CDF scan.
    pub fn sample_row(row: ndarray::ArrayView1<'_, f64>, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        row.len() - 1
    }

    /// Random MDP with dense stochastic rows, rewards in [-1, 1], a random
    /// initial distribution, and the index embedding.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut impl Rng) -> TabularMdp {
        let mut transition = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let mut t = Array2::zeros((n_states, n_states));
            for mut row in t.rows_mut() {
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = rng.gen_range(0.01..1.0);
                    total += *v;
                }
                row.mapv_inplace(|v| v / total);
                // renormalize exactly against accumulated rounding
                let s: f64 = row.sum();
                let last = row.len() - 1;
                row[last] += 1.0 - s;
            }
            transition.push(t);
        }
        let reward = Array2::from_shape_fn((n_states, n_actions), |_| rng.gen_range(-1.0..1.0));
        let mut init = Array1::from_shape_fn(n_states, |_| rng.gen_range(0.01..1.0));
        let total = init.sum();
        init.mapv_inplace(|v| v / total);
        let s = init.sum();
        let last = init.len() - 1;
        init[last] += 1.0 - s;
        TabularMdp::new(transition, reward, init, None).expect("random construction is valid")
    }

    /// Max over (s, a) of W1(T(.|s,a), delta_s) under the embedding.
    pub fn time_lipschitz(&self) -> f64 {
        let mut l_t = 0.0_f64;
        for a in 0..self.n_actions {
            for s in 0..self.n_states {
                let w = w1_row_vs_dirac(self.transition[a].row(s), s, &self.embedding);
                l_t = l_t.max(w);
            }
        }
        l_t
    }

    /// Max same-action slope of the reward table under the embedding metric.
    pub fn reward_lipschitz(&self) -> f64 {
        reward_table_lipschitz(&self.reward, &self.embedding)
    }
}

/// Largest finite-difference slope |R(s1,a) - R(s2,a)| / |e(s1) - e(s2)|
/// over all state pairs and actions. States sharing a coordinate must agree
/// on rewards or the constant is infinite.
pub(crate) fn reward_table_lipschitz(reward: &Array2<f64>, embedding: &[f64]) -> f64 {
    let (n_states, n_actions) = reward.dim();
    let mut l_r = 0.0_f64;
    for a in 0..n_actions {
        for s1 in 0..n_states {
            for s2 in (s1 + 1)..n_states {
                let dr = (reward[(s1, a)] - reward[(s2, a)]).abs();
                let ds = (embedding[s1] - embedding[s2]).abs();
                if ds == 0.0 {
                    if dr > 0.0 {
                        return f64::INFINITY;
                    }
                } else {
                    l_r = l_r.max(dr / ds);
                }
            }
        }
    }
    l_r
}

/// Exact 1-D W1 between a probability row and the Dirac at `at`, via the
/// CDF-difference integral on the sorted support.
pub(crate) fn w1_row_vs_dirac(
    row: ndarray::ArrayView1<'_, f64>,
    at: usize,
    coords: &[f64],
) -> f64 {
    let mut q = vec![0.0; row.len()];
    q[at] = 1.0;
    w1_under_coords(row.as_slice().unwrap(), &q, coords)
}

pub(crate) fn w1_under_coords(p: &[f64], q: &[f64], coords: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&i, &j| coords[i].partial_cmp(&coords[j]).unwrap());
    let mut acc = 0.0;
    let mut cdf_gap = 0.0;
    for w in order.windows(2) {
        let (i, j) = (w[0], w[1]);
        cdf_gap += p[i] - q[i];
        acc += cdf_gap.abs() * (coords[j] - coords[i]);
    }
    acc
}

/// A tabular MDP dressed up as an `Env`: states and actions are one-hot
/// encoded for network consumption.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    id: String,
    spec: EnvSpec,
    mdp: TabularMdp,
}

impl TabularEnv {
    pub fn new(id: impl Into<String>, mdp: TabularMdp, horizon: usize, gamma: f64) -> Self {
        let spec = EnvSpec {
            state_dim: mdp.n_states(),
            action_dim: mdp.n_actions(),
            action_kind: ActionKind::Discrete {
                n: mdp.n_actions(),
            },
            horizon,
            gamma,
            r_max: mdp.max_abs_reward().max(f64::MIN_POSITIVE),
        };
        Self {
            id: id.into(),
            spec,
            mdp,
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }
}

impl Env for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> State {
        let mut rng = rng_from(seed);
        State::Discrete(TabularMdp::sample_row(self.mdp.initial_dist.view(), &mut rng))
    }

    fn step(&self, state: &State, action: &Action, noise_seed: u64) -> Result<Step, EnvError> {
        check_action(&self.spec, action)?;
        let s = state.index();
        let a = action.index();
        let mut rng = rng_from(noise_seed);
        let next = TabularMdp::sample_row(self.mdp.transition_row(s, a), &mut rng);
        Ok(Step {
            next_state: State::Discrete(next),
            reward: self.mdp.reward(s, a),
            terminal: false,
        })
    }

    fn reward(&self, state: &State, action: &Action) -> f64 {
        self.mdp.reward(state.index(), action.index())
    }

    fn lipschitz_constants(&self) -> Option<Lipschitz> {
        Some(Lipschitz {
            l_t: self.mdp.time_lipschitz(),
            l_r: self.mdp.reward_lipschitz(),
            source: LipschitzSource::Exact,
        })
    }

    fn zero_action(&self) -> Action {
        Action::Discrete(0)
    }

    fn encode_state(&self, s: &State) -> Vec<f64> {
        one_hot(s.index(), self.mdp.n_states())
    }

    fn encode_action(&self, a: &Action) -> Vec<f64> {
        one_hot(a.index(), self.mdp.n_actions())
    }

    fn decode_state(&self, frame: &[f64]) -> Result<State, EnvError> {
        if frame.len() != self.spec.state_dim {
            return Err(EnvError::StateShape {
                expected: self.spec.state_dim,
                got: frame.len(),
            });
        }
        Ok(State::Discrete(super::argmax(frame)))
    }

    fn decode_action(&self, frame: &[f64]) -> Result<Action, EnvError> {
        if frame.len() != self.spec.action_dim {
            return Err(EnvError::ActionShape {
                expected: self.spec.action_dim,
                got: frame.len(),
            });
        }
        Ok(Action::Discrete(super::argmax(frame)))
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        Some(&self.mdp)
    }

    fn id(&self) -> &str {
        &self.id
    }
}

/// K-state slippery chain. Actions: 0 = left, 1 = right. With probability
/// `p_slip` the move is not executed and the state stays put. Reward is the
/// normalized position s / (K-1), so drifting right is optimal everywhere.
pub fn chain_mdp(n_states: usize, p_slip: f64) -> TabularMdp {
    assert!(n_states >= 2);
    assert!((0.0..0.5).contains(&p_slip));
    let mut mats = Vec::new();
    for a in 0..2usize {
        let mut t = Array2::zeros((n_states, n_states));
        for s in 0..n_states {
            let target = if a == 0 {
                s.saturating_sub(1)
            } else {
                (s + 1).min(n_states - 1)
            };
            t[(s, target)] += 1.0 - p_slip;
            t[(s, s)] += p_slip;
        }
        mats.push(t);
    }
    let mut reward = Array2::zeros((n_states, 2));
    for s in 0..n_states {
        for a in 0..2 {
            reward[(s, a)] = s as f64 / (n_states - 1) as f64;
        }
    }
    let mut init = Array1::zeros(n_states);
    init[0] = 1.0;
    TabularMdp::new(mats, reward, init, None).expect("chain construction is valid")
}

/// 5x5 gridworld. Actions 0..4 = up, down, left, right with slip
/// probability `p_slip` (stay put). The goal cell (bottom-right) is
/// absorbing and pays reward 1 per step spent there.
pub fn grid5_mdp(p_slip: f64) -> TabularMdp {
    let side = 5usize;
    let n = side * side;
    let goal = n - 1;
    let mut mats = Vec::new();
    for a in 0..4usize {
        let mut t = Array2::zeros((n, n));
        for s in 0..n {
            if s == goal {
                t[(s, s)] = 1.0;
                continue;
            }
            let (r, c) = (s / side, s % side);
            let (nr, nc) = match a {
                0 => (r.saturating_sub(1), c),
                1 => ((r + 1).min(side - 1), c),
                2 => (r, c.saturating_sub(1)),
                _ => (r, (c + 1).min(side - 1)),
            };
            let target = nr * side + nc;
            t[(s, target)] += 1.0 - p_slip;
            t[(s, s)] += p_slip;
        }
        mats.push(t);
    }
    let mut reward = Array2::zeros((n, 4));
    for a in 0..4 {
        reward[(goal, a)] = 1.0;
    }
    let mut init = Array1::zeros(n);
    init[0] = 1.0;
    TabularMdp::new(mats, reward, init, None).expect("grid construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_state_example() -> TabularMdp {
        let t = ndarray::arr2(&[[0.9, 0.1], [0.0, 1.0]]);
        TabularMdp::new(
            vec![t.clone(), t],
            Array2::zeros((2, 2)),
            ndarray::arr1(&[1.0, 0.0]),
            Some(vec![0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let t = ndarray::arr2(&[[0.9, 0.2], [0.0, 1.0]]);
        let err = TabularMdp::new(
            vec![t],
            Array2::zeros((2, 1)),
            ndarray::arr1(&[1.0, 0.0]),
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn identity_dynamics_have_zero_time_lipschitz() {
        let t = Array2::eye(3);
        let mdp = TabularMdp::new(
            vec![t],
            Array2::zeros((3, 1)),
            ndarray::arr1(&[1.0, 0.0, 0.0]),
            None,
        )
        .unwrap();
        assert_eq!(mdp.time_lipschitz(), 0.0);
    }

    #[test]
    fn chain_example_time_lipschitz() {
        // Rows [0.9, 0.1] from state 0 and [0, 1] from state 1 under the
        // unit embedding give W1s of 0.1 and 0, so L_T = 0.1.
        let mdp = two_state_example();
        assert!((mdp.time_lipschitz() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_reward_has_zero_lipschitz() {
        let mdp = two_state_example();
        assert_eq!(mdp.reward_lipschitz(), 0.0);
    }

    #[test]
    fn tabular_lipschitz_matches_brute_force() {
        let mdp = chain_mdp(6, 0.15);
        let mut expect = 0.0_f64;
        for a in 0..mdp.n_actions() {
            for s in 0..mdp.n_states() {
                // brute-force transport against the Dirac: mass p moved from
                // s' to s costs p * |e(s') - e(s)| since the target is a point
                let w: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .enumerate()
                    .map(|(s2, &p)| p * (mdp.embedding()[s2] - mdp.embedding()[s]).abs())
                    .sum();
                expect = expect.max(w);
            }
        }
        assert!((mdp.time_lipschitz() - expect).abs() < 1e-12);
    }

    #[test]
    fn point_mass_initial_distribution_is_deterministic() {
        let env = TabularEnv::new("chain", chain_mdp(4, 0.1), 20, 0.95);
        for seed in [0, 1, 99] {
            assert_eq!(env.reset(seed), State::Discrete(0));
        }
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let mut init = Array1::zeros(3);
        init[0] = 0.3;
        init[1] = 0.3;
        init[2] = 0.4;
        let mdp = TabularMdp::new(
            vec![Array2::eye(3)],
            Array2::zeros((3, 1)),
            init,
            None,
        )
        .unwrap();
        let env = TabularEnv::new("t", mdp, 10, 0.9);
        for seed in 0..20 {
            assert_eq!(env.reset(seed), env.reset(seed));
        }
    }

    #[test]
    fn step_frequencies_match_transition_row() {
        // 2-state chain, row [0.9, 0.1]: a million seeded draws land within
        // +/- 0.002 of the true row.
        let mdp = two_state_example();
        let env = TabularEnv::new("t", mdp, 10, 0.9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let mut count1 = 0usize;
        for _ in 0..n {
            let out = env
                .step(&State::Discrete(0), &Action::Discrete(0), rng.gen())
                .unwrap();
            if out.next_state.index() == 1 {
                count1 += 1;
            }
        }
        let f1 = count1 as f64 / n as f64;
        assert!((f1 - 0.1).abs() < 0.002, "frequency {f1}");
    }

    #[test]
    fn step_is_pure_in_its_seed() {
        let env = TabularEnv::new("chain", chain_mdp(6, 0.2), 20, 0.95);
        for seed in 0..50u64 {
            let a = env.step(&State::Discrete(2), &Action::Discrete(1), seed).unwrap();
            let b = env.step(&State::Discrete(2), &Action::Discrete(1), seed).unwrap();
            assert_eq!(a.next_state, b.next_state);
        }
    }

    #[test]
    fn grid_goal_is_absorbing() {
        let mdp = grid5_mdp(0.1);
        for a in 0..4 {
            assert_eq!(mdp.transition_row(24, a)[24], 1.0);
            assert_eq!(mdp.reward(24, a), 1.0);
        }
    }

    #[test]
    fn malformed_action_is_rejected() {
        let env = TabularEnv::new("chain", chain_mdp(4, 0.1), 20, 0.95);
        assert!(env
            .step(&State::Discrete(0), &Action::Discrete(7), 0)
            .is_err());
        assert!(env
            .step(&State::Discrete(0), &Action::Vector(vec![0.0]), 0)
            .is_err());
    }
}
