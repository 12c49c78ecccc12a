//! Stochastic policy heads: tanh-squashed Gaussian for box actions and
//! categorical for discrete actions.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::Action;

use super::mlp::{Mlp, MlpVars};
use super::tape::{Arr, Tape, Var};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const ATANH_CLIP: f64 = 1.0 - 1e-9;

pub fn normal_logp(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - HALF_LN_2PI
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// log(1 - tanh(u)^2) in the overflow-free softplus form.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Gaussian policy with state-dependent log-std (clamped to [-5, 2]) and a
/// tanh squash onto the action box. The MLP emits means in the first half
/// of its output and raw log-stds in the second half.
#[derive(Debug, Clone)]
pub struct GaussianPolicyHead {
    pub net: Mlp,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl GaussianPolicyHead {
    pub fn new(input_dim: usize, hidden: &[usize], low: Vec<f64>, high: Vec<f64>, rng: &mut ChaCha8Rng) -> Self {
        let k = low.len();
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * k);
        GaussianPolicyHead {
            net: Mlp::new(&sizes, rng),
            low,
            high,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    fn center(&self, j: usize) -> f64 {
        0.5 * (self.low[j] + self.high[j])
    }

    fn half(&self, j: usize) -> f64 {
        0.5 * (self.high[j] - self.low[j])
    }

    fn mean_logstd(&self, state: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.net.forward_row(state);
        let k = self.action_dim();
        let mean = out[..k].to_vec();
        let logstd = out[k..].iter().map(|&v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        (mean, logstd)
    }

    /// Reparameterized sample with its exact squashed log-density.
    pub fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> (Action, f64) {
        let (mean, logstd) = self.mean_logstd(state);
        let k = self.action_dim();
        let mut action = Vec::with_capacity(k);
        let mut logp = 0.0;
        for j in 0..k {
            let std = logstd[j].exp();
            let eps: f64 = rng.sample(StandardNormal);
            let u = mean[j] + std * eps;
            logp += -0.5 * eps * eps - logstd[j] - HALF_LN_2PI;
            logp -= self.half(j).ln() + log_one_minus_tanh_sq(u);
            action.push(u.tanh() * self.half(j) + self.center(j));
        }
        (Action::Vector(action), logp)
    }

    /// Deterministic evaluation action: the squashed mean.
    pub fn mean_action(&self, state: &[f64]) -> Action {
        let (mean, _) = self.mean_logstd(state);
        let a = mean
            .iter()
            .enumerate()
            .map(|(j, &m)| m.tanh() * self.half(j) + self.center(j))
            .collect();
        Action::Vector(a)
    }

    /// Exact log-density of a given action, inverting the squash.
    pub fn log_prob(&self, state: &[f64], action: &Action) -> f64 {
        let a = match action {
            Action::Vector(v) => v,
            Action::Discrete(_) => panic!("gaussian head expects continuous actions"),
        };
        let (mean, logstd) = self.mean_logstd(state);
        let mut logp = 0.0;
        for j in 0..self.action_dim() {
            let z = ((a[j] - self.center(j)) / self.half(j)).clamp(-ATANH_CLIP, ATANH_CLIP);
            let u = z.atanh();
            let std = logstd[j].exp();
            logp += normal_logp(u, mean[j], std);
            logp -= self.half(j).ln() + log_one_minus_tanh_sq(u);
        }
        logp
    }

    fn heads_var(&self, t: &mut Tape, vars: &MlpVars, states: Var) -> (Var, Var) {
        let out = self.net.forward_var(t, vars, states);
        let k = self.action_dim();
        let mean = t.slice_cols(out, 0, k);
        let raw = t.slice_cols(out, k, 2 * k);
        let logstd = t.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        (mean, logstd)
    }

    /// Tape-level reparameterized sample for a batch of states under frozen
    /// noise: returns (squashed actions, per-row log-density, logstd).
    pub fn sample_var(
        &self,
        t: &mut Tape,
        vars: &MlpVars,
        states: Var,
        eps: &Arr,
    ) -> (Var, Var, Var) {
        let m = eps.nrows();
        let k = self.action_dim();
        let (mean, logstd) = self.heads_var(t, vars, states);
        let std = t.exp(logstd);
        let eps_c = t.constant(eps.clone());
        let noise = t.mul(std, eps_c);
        let u = t.add(mean, noise);

        // normal part: -0.5 eps^2 - logstd - 0.5 ln 2pi, with eps constant
        let base = eps.mapv(|e| -0.5 * e * e - HALF_LN_2PI);
        let base_c = t.constant(base);
        let neg_logstd = t.neg(logstd);
        let normal_part = t.add(base_c, neg_logstd);

        // squash correction per dim: ln half + 2(ln2 - u - softplus(-2u))
        let minus2u = t.scale(u, -2.0);
        let sp = t.softplus(minus2u);
        let u_plus_sp = t.add(u, sp);
        let neg2 = t.scale(u_plus_sp, -2.0);
        let shift_row = Array2::from_shape_fn((1, k), |(_, j)| {
            2.0 * std::f64::consts::LN_2 + self.half(j).ln()
        });
        let shift_c = t.constant(shift_row);
        let shift_b = t.broadcast_row(shift_c, m);
        let corr = t.add(neg2, shift_b);

        let sum_normal = t.sum_axis1(normal_part);
        let sum_corr = t.sum_axis1(corr);
        let logp = t.sub(sum_normal, sum_corr);

        let tanh_u = t.tanh(u);
        let half_row = Array2::from_shape_fn((1, k), |(_, j)| self.half(j));
        let center_row = Array2::from_shape_fn((1, k), |(_, j)| self.center(j));
        let half_c = t.constant(half_row);
        let half_b = t.broadcast_row(half_c, m);
        let center_c = t.constant(center_row);
        let center_b = t.broadcast_row(center_c, m);
        let scaled = t.mul(tanh_u, half_b);
        let action = t.add(scaled, center_b);
        (action, logp, logstd)
    }

    /// Tape-level log-density of fixed actions (used by likelihood losses):
    /// the squash is inverted numerically, so only the Gaussian part carries
    /// gradients.
    pub fn log_prob_var(&self, t: &mut Tape, vars: &MlpVars, states: Var, actions: &Arr) -> Var {
        let m = actions.nrows();
        let k = self.action_dim();
        let (mean, logstd) = self.heads_var(t, vars, states);
        let std = t.exp(logstd);
        let mut u_arr = Arr::zeros((m, k));
        let mut corr = Arr::zeros((m, 1));
        for i in 0..m {
            for j in 0..k {
                let z = ((actions[(i, j)] - self.center(j)) / self.half(j))
                    .clamp(-ATANH_CLIP, ATANH_CLIP);
                let u = z.atanh();
                u_arr[(i, j)] = u;
                corr[(i, 0)] += self.half(j).ln() + log_one_minus_tanh_sq(u);
            }
        }
        let u_c = t.constant(u_arr);
        let diff = t.sub(u_c, mean);
        let inv_std = t.recip(std);
        let z = t.mul(diff, inv_std);
        let z2 = t.square(z);
        let half_z2 = t.scale(z2, -0.5);
        let neg_logstd = t.neg(logstd);
        let per_dim = t.add(half_z2, neg_logstd);
        let shifted = t.offset(per_dim, -HALF_LN_2PI);
        let row = t.sum_axis1(shifted);
        let corr_c = t.constant(corr);
        t.sub(row, corr_c)
    }
}

/// Categorical policy over `n` discrete actions.
#[derive(Debug, Clone)]
pub struct CategoricalPolicyHead {
    pub net: Mlp,
    pub n_actions: usize,
}

impl CategoricalPolicyHead {
    pub fn new(input_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        CategoricalPolicyHead {
            net: Mlp::new(&sizes, rng),
            n_actions,
        }
    }

    pub fn log_probs(&self, state: &[f64]) -> Vec<f64> {
        let logits = self.net.forward_row(state);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
        logits.iter().map(|&l| l - lse).collect()
    }

    pub fn probs(&self, state: &[f64]) -> Vec<f64> {
        self.log_probs(state).iter().map(|&l| l.exp()).collect()
    }

    pub fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> (Action, f64) {
        let lp = self.log_probs(state);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return (Action::Discrete(i), l);
            }
        }
        (Action::Discrete(self.n_actions - 1), lp[self.n_actions - 1])
    }

    pub fn mean_action(&self, state: &[f64]) -> Action {
        let lp = self.log_probs(state);
        Action::Discrete(crate::env::argmax(&lp))
    }

    pub fn log_prob(&self, state: &[f64], action: &Action) -> f64 {
        self.log_probs(state)[action.index()]
    }

    /// Tape-level log-softmax over a batch of states: m x n_actions.
    pub fn log_probs_var(&self, t: &mut Tape, vars: &MlpVars, states: Var) -> Var {
        let logits = self.net.forward_var(t, vars, states);
        let lse = t.logsumexp_rows(logits);
        let lse_b = t.broadcast_col(lse, self.n_actions);
        t.sub(logits, lse_b)
    }
}

/// Unified policy head over augmented-state encodings.
#[derive(Debug, Clone)]
pub enum PolicyHead {
    Gaussian(GaussianPolicyHead),
    Categorical(CategoricalPolicyHead),
}

impl PolicyHead {
    pub fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> (Action, f64) {
        match self {
            PolicyHead::Gaussian(h) => h.sample(state, rng),
            PolicyHead::Categorical(h) => h.sample(state, rng),
        }
    }

    pub fn mean_action(&self, state: &[f64]) -> Action {
        match self {
            PolicyHead::Gaussian(h) => h.mean_action(state),
            PolicyHead::Categorical(h) => h.mean_action(state),
        }
    }

    pub fn log_prob(&self, state: &[f64], action: &Action) -> f64 {
        match self {
            PolicyHead::Gaussian(h) => h.log_prob(state, action),
            PolicyHead::Categorical(h) => h.log_prob(state, action),
        }
    }

    pub fn net(&self) -> &Mlp {
        match self {
            PolicyHead::Gaussian(h) => &h.net,
            PolicyHead::Categorical(h) => &h.net,
        }
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        match self {
            PolicyHead::Gaussian(h) => &mut h.net,
            PolicyHead::Categorical(h) => &mut h.net,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, PolicyHead::Categorical(_))
    }

    /// Log-densities of given actions for a batch of states, sharing one
    /// network forward pass. Agrees with `log_prob` row by row.
    pub fn log_prob_batch(&self, states: &Arr, actions: &[Action]) -> Vec<f64> {
        let m = states.nrows();
        assert_eq!(actions.len(), m);
        match self {
            PolicyHead::Gaussian(h) => {
                let out = h.net.forward(states);
                let k = h.action_dim();
                (0..m)
                    .map(|i| {
                        let a = match &actions[i] {
                            Action::Vector(v) => v,
                            Action::Discrete(_) => panic!("gaussian head expects continuous actions"),
                        };
                        let mut logp = 0.0;
                        for j in 0..k {
                            let mean = out[(i, j)];
                            let logstd = out[(i, k + j)].clamp(LOG_STD_MIN, LOG_STD_MAX);
                            let z = ((a[j] - h.center(j)) / h.half(j))
                                .clamp(-ATANH_CLIP, ATANH_CLIP);
                            let u = z.atanh();
                            logp += normal_logp(u, mean, logstd.exp());
                            logp -= h.half(j).ln() + log_one_minus_tanh_sq(u);
                        }
                        logp
                    })
                    .collect()
            }
            PolicyHead::Categorical(h) => {
                let logits = h.net.forward(states);
                (0..m)
                    .map(|i| {
                        let row = logits.row(i);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse =
                            row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
                        row[actions[i].index()] - lse
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rng_from;

    #[test]
    fn standard_normal_density_at_zero() {
        assert!((normal_logp(0.0, 0.0, 1.0) - (-0.9189385332046727)).abs() < 1e-15);
    }

    #[test]
    fn uniform_discrete_head_log_probability() {
        let mut rng = rng_from(0);
        let mut head = CategoricalPolicyHead::new(3, &[8], 4, &mut rng);
        // zero logits -> exactly uniform
        for w in head.net.weights.iter_mut() {
            w.fill(0.0);
        }
        let lp = head.log_probs(&[0.1, 0.2, 0.3]);
        for l in lp {
            assert!((l - (-(4.0_f64).ln())).abs() < 1e-15);
        }
        let (_, logp) = head.sample(&[0.1, 0.2, 0.3], &mut rng);
        assert!((logp - (-(4.0_f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        // 1-D action box: numerically integrate the density via Simpson
        let mut rng = rng_from(5);
        let head = GaussianPolicyHead::new(2, &[16], vec![-2.0], vec![2.0], &mut rng);
        let state = [0.4, -0.7];
        let (lo, hi) = (-2.0 + 1e-9, 2.0 - 1e-9);
        let n = 20_000usize; // even
        let h = (hi - lo) / n as f64;
        let f = |a: f64| head.log_prob(&state, &Action::Vector(vec![a])).exp();
        let mut integral = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * f(lo + i as f64 * h);
        }
        integral *= h / 3.0;
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn samples_stay_inside_bounds_and_logp_matches() {
        let mut rng = rng_from(9);
        let head = GaussianPolicyHead::new(3, &[16], vec![-1.0, 0.0], vec![1.0, 4.0], &mut rng);
        let state = [0.2, -0.1, 0.5];
        for _ in 0..500 {
            let (a, logp) = head.sample(&state, &mut rng);
            let v = match &a {
                Action::Vector(v) => v.clone(),
                _ => unreachable!(),
            };
            assert!(v[0].abs() <= 1.0 && (0.0..=4.0).contains(&v[1]));
            let lp2 = head.log_prob(&state, &a);
            // atanh round trip loses a little precision near saturation
            assert!((logp - lp2).abs() < 1e-6, "{logp} vs {lp2}");
        }
    }

    #[test]
    fn sampled_logp_mean_matches_entropy_estimate() {
        // E[log p] = -H; estimate H independently through the
        // change-of-variables identity H(a) = H(u) + E[log |da/du|]
        let mut rng = rng_from(11);
        let head = GaussianPolicyHead::new(2, &[16], vec![-2.0], vec![2.0], &mut rng);
        let state = [0.3, 0.8];
        let n = 100_000usize;
        let mut sum_logp = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (_, logp) = head.sample(&state, &mut rng);
            sum_logp += logp;
            sum_sq += logp * logp;
        }
        let mean_logp = sum_logp / n as f64;
        let se = ((sum_sq / n as f64 - mean_logp * mean_logp) / n as f64).sqrt();

        let (mean, logstd) = head.mean_logstd(&state);
        let h_u = 0.5 + HALF_LN_2PI + logstd[0];
        let mut jac = 0.0;
        let mut rng2 = rng_from(1234);
        for _ in 0..n {
            let eps: f64 = rng2.sample(StandardNormal);
            let u = mean[0] + logstd[0].exp() * eps;
            jac += (head.half(0)).ln() + log_one_minus_tanh_sq(u);
        }
        let h_a = h_u + jac / n as f64;
        assert!(
            (mean_logp + h_a).abs() < 3.0 * se + 3e-3,
            "mean logp {mean_logp}, -H {}",
            -h_a
        );
    }

    #[test]
    fn tape_sample_matches_numeric_formula() {
        let mut rng = rng_from(17);
        let head = GaussianPolicyHead::new(2, &[8], vec![-1.5], vec![1.5], &mut rng);
        let states = ndarray::arr2(&[[0.1, 0.2], [-0.4, 0.9]]);
        let eps = ndarray::arr2(&[[0.33], [-1.2]]);
        let mut t = Tape::new();
        let vars = head.net.const_vars(&mut t);
        let sv = t.constant(states.clone());
        let (a, logp, _) = head.sample_var(&mut t, &vars, sv, &eps);
        for i in 0..2 {
            let (mean, logstd) = head.mean_logstd(&[states[(i, 0)], states[(i, 1)]]);
            let u = mean[0] + logstd[0].exp() * eps[(i, 0)];
            let expect_a = u.tanh() * head.half(0) + head.center(0);
            let expect_lp = -0.5 * eps[(i, 0)] * eps[(i, 0)] - logstd[0] - HALF_LN_2PI
                - head.half(0).ln()
                - log_one_minus_tanh_sq(u);
            assert!((t.value(a)[(i, 0)] - expect_a).abs() < 1e-12);
            assert!((t.value(logp)[(i, 0)] - expect_lp).abs() < 1e-12);
        }
    }
}
