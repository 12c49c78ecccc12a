//! Adversarial reward learner: a structured discriminator over augmented
//! state-action pairs, its regularized training loss, and reward
//! extraction.
//!
//! The discriminator is D(x,a) = exp(R(x,a)) / (exp(R(x,a)) + pi(a|x)),
//! evaluated in log space as sigmoid(R - log pi). Generator samples come
//! straight from the off-policy buffer; the importance correction for that
//! substitution is deliberately omitted.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::mlp::{grad_input_penalty_on, grad_params};
use crate::nn::tape::{Arr, Tape, Var};
use crate::nn::Mlp;

/// Density floor before taking logs, guarding squashed-Gaussian tails.
pub const DENSITY_FLOOR_LN: f64 = -690.77552789821368; // ln(1e-300)

#[derive(Debug, Clone)]
pub struct Discriminator {
    /// Scalar reward net over the flattened (augmented state, action) pair.
    pub reward_net: Mlp,
    /// Margin added inside the reward logs to prevent numerical error.
    pub delta_margin: f64,
    pub lambda_gp: f64,
    pub lambda_ent: f64,
}

/// Scalars produced by one discriminator update.
#[derive(Debug, Clone, Copy)]
pub struct DiscLoss {
    pub total: f64,
    pub ce_expert: f64,
    pub ce_gen: f64,
    pub grad_penalty: f64,
    pub entropy_term: f64,
}

impl Discriminator {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        delta_margin: f64,
        lambda_gp: f64,
        lambda_ent: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Discriminator {
            reward_net: Mlp::new(&sizes, rng),
            delta_margin,
            lambda_gp,
            lambda_ent,
        }
    }

    /// R(x,a) - log pi(a|x), the discriminator logit.
    pub fn logit(&self, input: &[f64], log_pi: f64) -> f64 {
        self.reward_net.forward_row(input)[0] - log_pi.max(DENSITY_FLOOR_LN)
    }

    /// D(x,a) in (0,1), computed as sigmoid of the logit.
    pub fn d_value(&self, input: &[f64], log_pi: f64) -> f64 {
        sigmoid(self.logit(input, log_pi))
    }

    /// Extracted reward log(D + delta) - log(1 - D + delta); the complement
    /// is evaluated as sigmoid(-logit) so the margin-free form stays exact
    /// far into saturation.
    pub fn reward(&self, input: &[f64], log_pi: f64) -> f64 {
        let z = self.logit(input, log_pi);
        self.reward_of_logit(z)
    }

    pub fn reward_of_logit(&self, z: f64) -> f64 {
        let d = sigmoid(z);
        let complement = sigmoid(-z);
        (d + self.delta_margin).ln() - (complement + self.delta_margin).ln()
    }

    /// Cross-entropy loss with gradient penalty and output-entropy
    /// regularization; gradients flow only into the reward net (policy
    /// densities enter as constants).
    ///
    /// The gradient penalty is evaluated at points interpolated uniformly
    /// at random between paired expert and generator inputs.
    pub fn loss_and_grads(
        &self,
        expert_inputs: &Arr,
        expert_log_pi: &[f64],
        gen_inputs: &Arr,
        gen_log_pi: &[f64],
        gp_rng: &mut ChaCha8Rng,
    ) -> (DiscLoss, Vec<Arr>) {
        let mut t = Tape::new();
        let vars = self.reward_net.vars(&mut t);
        let (loss, parts) = self.loss_on(
            &mut t,
            &vars,
            expert_inputs,
            expert_log_pi,
            gen_inputs,
            gen_log_pi,
            gp_rng,
        );
        let grads = grad_params(&mut t, loss, &vars);
        (parts, grads)
    }

    fn loss_on(
        &self,
        t: &mut Tape,
        vars: &crate::nn::MlpVars,
        expert_inputs: &Arr,
        expert_log_pi: &[f64],
        gen_inputs: &Arr,
        gen_log_pi: &[f64],
        gp_rng: &mut ChaCha8Rng,
    ) -> (Var, DiscLoss) {
        let m_e = expert_inputs.nrows();
        let m_g = gen_inputs.nrows();
        assert!(m_e > 0 && m_g > 0, "both batches must be non-empty");
        assert_eq!(expert_log_pi.len(), m_e);
        assert_eq!(gen_log_pi.len(), m_g);

        let z_e = self.logit_batch(t, vars, expert_inputs, expert_log_pi);
        let z_g = self.logit_batch(t, vars, gen_inputs, gen_log_pi);

        // -log D = softplus(-z), -log(1 - D) = softplus(z)
        let neg_ze = t.neg(z_e);
        let sp_e = t.softplus(neg_ze);
        let ce_expert = t.mean_all(sp_e);
        let sp_g = t.softplus(z_g);
        let ce_gen = t.mean_all(sp_g);

        // entropy of D over both batches: H = D*softplus(-z) + (1-D)*softplus(z)
        let h_e = binary_entropy(t, z_e);
        let h_g = binary_entropy(t, z_g);
        let se = t.sum_all(h_e);
        let sg = t.sum_all(h_g);
        let total_h = t.add(se, sg);
        let mean_h = t.scale(total_h, 1.0 / (m_e + m_g) as f64);
        let ent_term = t.neg(mean_h);

        // gradient penalty on pairwise interpolates
        let n_pairs = m_e.min(m_g);
        let dim = expert_inputs.ncols();
        let mut interp = Array2::zeros((n_pairs, dim));
        for i in 0..n_pairs {
            let u: f64 = gp_rng.gen();
            for j in 0..dim {
                interp[(i, j)] = u * expert_inputs[(i, j)] + (1.0 - u) * gen_inputs[(i, j)];
            }
        }
        let (gp, _) = grad_input_penalty_on(t, &self.reward_net, vars, &interp);

        let gp_scaled = t.scale(gp, self.lambda_gp);
        let ent_scaled = t.scale(ent_term, self.lambda_ent);
        let ce = t.add(ce_expert, ce_gen);
        let reg = t.add(gp_scaled, ent_scaled);
        let loss = t.add(ce, reg);
        let parts = DiscLoss {
            total: t.scalar_value(loss),
            ce_expert: t.scalar_value(ce_expert),
            ce_gen: t.scalar_value(ce_gen),
            grad_penalty: t.scalar_value(gp),
            entropy_term: t.scalar_value(ent_term),
        };
        (loss, parts)
    }

    fn logit_batch(
        &self,
        t: &mut Tape,
        vars: &crate::nn::MlpVars,
        inputs: &Arr,
        log_pi: &[f64],
    ) -> Var {
        let x = t.constant(inputs.clone());
        let r = self.reward_net.forward_var(t, vars, x);
        let floored: Vec<f64> = log_pi.iter().map(|&l| l.max(DENSITY_FLOOR_LN)).collect();
        let lp = t.constant(Arr::from_shape_vec((log_pi.len(), 1), floored).unwrap());
        t.sub(r, lp)
    }

    /// Batch rewards under the current (frozen) net from raw inputs.
    pub fn reward_batch(&self, inputs: &Arr, log_pi: &[f64]) -> Vec<f64> {
        let out = self.reward_net.forward(inputs);
        out.column(0)
            .iter()
            .zip(log_pi)
            .map(|(&r, &lp)| self.reward_of_logit(r - lp.max(DENSITY_FLOOR_LN)))
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// H_b(D) built from the logit: D*softplus(-z) + (1-D)*softplus(z).
fn binary_entropy(t: &mut Tape, z: Var) -> Var {
    let d = t.sigmoid(z);
    let neg_z = t.neg(z);
    let d_comp = t.sigmoid(neg_z);
    let sp_neg = t.softplus(neg_z);
    let sp_pos = t.softplus(z);
    let a = t.mul(d, sp_neg);
    let b = t.mul(d_comp, sp_pos);
    t.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rng_from;
    use crate::nn::fdcheck;
    use ndarray::arr2;

    fn zero_disc(input_dim: usize) -> Discriminator {
        Discriminator {
            reward_net: Mlp::zeros(&[input_dim, 4, 1]),
            delta_margin: 0.0,
            lambda_gp: 0.0,
            lambda_ent: 0.0,
        }
    }

    #[test]
    fn equal_logit_gives_half() {
        let d = zero_disc(2);
        assert_eq!(d.d_value(&[0.3, -0.3], 0.0), 0.5);
    }

    #[test]
    fn saturated_logit_approaches_one() {
        let d = zero_disc(2);
        // R - log pi = 50
        let v = d.d_value(&[0.1, 0.1], -50.0);
        assert!(v >= 1.0 - 1e-20);
        assert!(v <= 1.0);
    }

    #[test]
    fn log_space_matches_direct_formula() {
        let mut rng = rng_from(3);
        for _ in 0..50 {
            let disc = Discriminator::new(3, &[8], 0.0, 0.0, 0.0, &mut rng);
            let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let log_pi: f64 = rng.gen_range(-3.0..1.0);
            let r = disc.reward_net.forward_row(&input)[0];
            let direct = r.exp() / (r.exp() + log_pi.exp());
            let log_space = disc.d_value(&input, log_pi);
            assert!(
                (direct - log_space).abs() < 1e-12,
                "{direct} vs {log_space}"
            );
        }
    }

    #[test]
    fn loss_at_uninformative_discriminator() {
        // D identically 0.5 with penalties off: loss = 2 ln 2
        let d = zero_disc(2);
        let xe = arr2(&[[0.5, 0.5], [0.1, -0.1]]);
        let xg = arr2(&[[-0.5, 0.2], [0.3, 0.3]]);
        let (parts, _) = d.loss_and_grads(&xe, &[0.0, 0.0], &xg, &[0.0, 0.0], &mut rng_from(0));
        assert!((parts.total - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfectly_separated_batches_drive_loss_to_zero() {
        let d = zero_disc(2);
        let xe = arr2(&[[0.5, 0.5]]);
        let xg = arr2(&[[-0.5, 0.2]]);
        // logit +50 on expert, -50 on generator
        let (parts, _) = d.loss_and_grads(&xe, &[-50.0], &xg, &[50.0], &mut rng_from(0));
        assert!(parts.total > 0.0);
        assert!(parts.total < 1e-20);
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let mut rng = rng_from(11);
        for trial in 0..20 {
            let disc = Discriminator::new(2, &[6], 1e-7, 10.0, 1e-3, &mut rng);
            let xe = Arr::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
            let xg = Arr::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
            let lpe: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..0.0)).collect();
            let lpg: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..0.0)).collect();
            let (_, analytic) =
                disc.loss_and_grads(&xe, &lpe, &xg, &lpg, &mut rng_from(1234 + trial));
            let mut probe = disc.reward_net.clone();
            let loss_of = |net: &Mlp| {
                let d2 = Discriminator {
                    reward_net: net.clone(),
                    ..disc.clone()
                };
                d2.loss_and_grads(&xe, &lpe, &xg, &lpg, &mut rng_from(1234 + trial))
                    .0
                    .total
            };
            assert!(
                fdcheck::check_param_grads(&mut probe, &analytic, loss_of, 1e-4),
                "trial {trial}"
            );
        }
    }

    #[test]
    fn reward_sign_examples() {
        let d = zero_disc(2);
        // z = 0 -> D = 0.5 -> reward 0
        assert_eq!(d.reward(&[0.0, 0.0], 0.0), 0.0);
        // D = 0.9 -> reward ln 9
        let z = (0.9f64 / 0.1).ln();
        let r = d.reward_of_logit(z);
        assert!((r - 9.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn margin_free_reward_equals_logit() {
        let mut rng = rng_from(17);
        for _ in 0..100 {
            let disc = Discriminator::new(3, &[10, 10], 0.0, 0.0, 0.0, &mut rng);
            let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let log_pi: f64 = rng.gen_range(-5.0..2.0);
            let z = disc.logit(&input, log_pi);
            let r = disc.reward(&input, log_pi);
            assert!((r - z).abs() < 1e-9, "reward {r} vs logit {z}");
        }
    }

    #[test]
    fn gradient_penalty_is_reparameterization_invariant() {
        // duplicating a hidden unit and halving its outgoing weight leaves
        // the represented function, hence the penalty, unchanged to 1e-9
        let mut rng = rng_from(23);
        let base = Mlp::new(&[2, 3, 1], &mut rng);
        let mut dup = Mlp::zeros(&[2, 4, 1]);
        for r in 0..2 {
            for c in 0..3 {
                dup.weights[0][(r, c)] = base.weights[0][(r, c)];
            }
            dup.weights[0][(r, 3)] = base.weights[0][(r, 0)];
        }
        for c in 0..3 {
            dup.biases[0][(0, c)] = base.biases[0][(0, c)];
        }
        dup.biases[0][(0, 3)] = base.biases[0][(0, 0)];
        for c in 0..3 {
            dup.weights[1][(c, 0)] = base.weights[1][(c, 0)];
        }
        dup.weights[1][(0, 0)] = base.weights[1][(0, 0)] / 2.0;
        dup.weights[1][(3, 0)] = base.weights[1][(0, 0)] / 2.0;
        dup.biases[1][(0, 0)] = base.biases[1][(0, 0)];

        for k in 0..20 {
            let p = vec![-1.0 + 0.1 * k as f64, 0.3 * (k as f64).sin()];
            let (pa, _) = crate::nn::grad_input_penalty(&base, &p);
            let (pb, _) = crate::nn::grad_input_penalty(&dup, &p);
            assert!((pa - pb).abs() < 1e-9, "{pa} vs {pb}");
        }
    }

    #[test]
    fn loss_decreases_on_separable_problem() {
        // frozen linearly separable batches: training should push the loss
        // down with at most 5% non-monotone steps
        let mut rng = rng_from(31);
        let mut disc = Discriminator::new(2, &[16], 1e-7, 0.1, 1e-3, &mut rng);
        let xe = Arr::from_shape_fn((32, 2), |_| rng.gen_range(0.5..1.5));
        let xg = Arr::from_shape_fn((32, 2), |_| rng.gen_range(-1.5..-0.5));
        let lpe = vec![0.0; 32];
        let lpg = vec![0.0; 32];
        let shapes: Vec<(usize, usize)> = disc
            .reward_net
            .param_arrays()
            .iter()
            .map(|a| a.dim())
            .collect();
        let mut adam = crate::nn::AdamState::new(&shapes);
        let mut losses = Vec::new();
        for step in 0..500 {
            let (parts, grads) =
                disc.loss_and_grads(&xe, &lpe, &xg, &lpg, &mut rng_from(step as u64));
            losses.push(parts.total);
            let mut params = disc.reward_net.param_arrays_mut();
            adam.apply(&mut params, &grads, 3e-3);
        }
        let violations = losses.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        assert!(
            violations <= 25,
            "{violations} non-monotone steps out of 500"
        );
        assert!(losses.last().unwrap() < &losses[0]);
    }
}
