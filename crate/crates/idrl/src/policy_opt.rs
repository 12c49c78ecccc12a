//! Auxiliary-delay soft actor-critic with n-step bootstrapping across the
//! delay gap.
//!
//! The full-delay actor acts in the environment; twin critics and the
//! auxiliary actor live at a shorter delay and are bridged to the full
//! delay by the n-step targets. Continuous actors use reparameterized
//! samples; discrete actors use exact expectations over actions, which
//! keeps every gradient path finite-difference checkable.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::TransitionRecord;
use crate::env::{Action, ActionKind};
use crate::nn::mlp::grad_params;
use crate::nn::tape::{Arr, Tape};
use crate::nn::{AdamState, CategoricalPolicyHead, GaussianPolicyHead, Mlp, PolicyHead};

/// Which actor an update touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorBranch {
    Auxiliary,
    FullDelay,
}

/// Dense batch view of transition records.
pub struct Batch {
    pub x: Arr,
    pub x_aux: Arr,
    pub a_enc: Arr,
    pub a_idx: Vec<usize>,
    pub rewards: Arr,
    pub x_next: Arr,
    pub x_aux_next: Arr,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_records<'a>(records: impl Iterator<Item = &'a TransitionRecord> + Clone) -> Batch {
        let rows: Vec<&TransitionRecord> = records.collect();
        assert!(!rows.is_empty());
        let m = rows.len();
        let stack = |get: &dyn Fn(&TransitionRecord) -> &[f64]| {
            let w = get(rows[0]).len();
            let mut out = Array2::zeros((m, w));
            for (i, r) in rows.iter().enumerate() {
                out.row_mut(i).assign(&ndarray::ArrayView1::from(get(r)));
            }
            out
        };
        let n = rows[0].r_seq.len();
        let mut rewards = Array2::zeros((m, n));
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.r_seq.iter().enumerate() {
                rewards[(i, j)] = v;
            }
        }
        Batch {
            x: stack(&|r| r.flat_x()),
            x_aux: stack(&|r| r.flat_x_aux()),
            a_enc: stack(&|r| r.flat_action()),
            a_idx: rows
                .iter()
                .map(|r| match &r.action {
                    Action::Discrete(i) => *i,
                    Action::Vector(_) => 0,
                })
                .collect(),
            rewards,
            x_next: stack(&|r| r.flat_x_next()),
            x_aux_next: stack(&|r| r.flat_x_aux_next()),
            done: rows.iter().map(|r| r.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }
}

/// The discounted n-step return with an optional bootstrap tail:
/// sum_i gamma^i r_i + gamma^n * boot, truncated when done.
pub fn nstep_return(rewards: &[f64], gamma: f64, boot: f64, done: bool) -> f64 {
    let mut y = 0.0;
    let mut disc = 1.0;
    for &r in rewards {
        y += disc * r;
        disc *= gamma;
    }
    if !done {
        y += disc * boot;
    }
    y
}

pub struct AuxDelayAgent {
    pub actor_full: PolicyHead,
    pub actor_aux: PolicyHead,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub alpha: f64,
    pub polyak: f64,
    pub nstep: usize,
    pub gamma: f64,
    pub opt_actor_full: AdamState,
    pub opt_actor_aux: AdamState,
    pub opt_critic1: AdamState,
    pub opt_critic2: AdamState,
    action_kind: ActionKind,
}

/// Scalars from one training iteration.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOptStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub branch: ActorBranch,
    pub mean_q: f64,
}

impl AuxDelayAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_dim: usize,
        x_aux_dim: usize,
        action_kind: ActionKind,
        actor_hidden: &[usize],
        critic_hidden: &[usize],
        alpha: f64,
        polyak: f64,
        nstep: usize,
        gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let a_dim = action_kind.dim();
        let make_head = |input_dim: usize, rng: &mut ChaCha8Rng| match &action_kind {
            ActionKind::Discrete { n } => PolicyHead::Categorical(CategoricalPolicyHead::new(
                input_dim,
                actor_hidden,
                *n,
                rng,
            )),
            ActionKind::Continuous { low, high } => PolicyHead::Gaussian(GaussianPolicyHead::new(
                input_dim,
                actor_hidden,
                low.clone(),
                high.clone(),
                rng,
            )),
        };
        let actor_full = make_head(x_dim, rng);
        let actor_aux = make_head(x_aux_dim, rng);
        let mut critic_sizes = vec![x_aux_dim + a_dim];
        critic_sizes.extend_from_slice(critic_hidden);
        critic_sizes.push(1);
        let critic1 = Mlp::new(&critic_sizes, rng);
        let critic2 = Mlp::new(&critic_sizes, rng);
        let target1 = critic1.clone();
        let target2 = critic2.clone();
        let shapes = |m: &Mlp| m.param_arrays().iter().map(|a| a.dim()).collect::<Vec<_>>();
        AuxDelayAgent {
            opt_actor_full: AdamState::new(&shapes(actor_full.net())),
            opt_actor_aux: AdamState::new(&shapes(actor_aux.net())),
            opt_critic1: AdamState::new(&shapes(&critic1)),
            opt_critic2: AdamState::new(&shapes(&critic2)),
            actor_full,
            actor_aux,
            critic1,
            critic2,
            target1,
            target2,
            alpha,
            polyak,
            nstep,
            gamma,
            action_kind,
        }
    }

    pub fn action_kind(&self) -> &ActionKind {
        &self.action_kind
    }

    /// Environment action from the full-delay actor.
    pub fn act(&self, x_flat: &[f64], rng: &mut ChaCha8Rng, deterministic: bool) -> Action {
        if deterministic {
            self.actor_full.mean_action(x_flat)
        } else {
            self.actor_full.sample(x_flat, rng).0
        }
    }

    /// Per-action Q table for a batch of auxiliary states: m x n_actions.
    fn q_table(&self, net: &Mlp, states: &Arr, n_actions: usize) -> Arr {
        let m = states.nrows();
        let mut out = Array2::zeros((m, n_actions));
        for a in 0..n_actions {
            let mut one_hot = Array2::zeros((m, n_actions));
            one_hot.column_mut(a).fill(1.0);
            let input = ndarray::concatenate(
                ndarray::Axis(1),
                &[states.view(), one_hot.view()],
            )
            .unwrap();
            out.column_mut(a).assign(&net.forward(&input).column(0));
        }
        out
    }

    /// Soft state value under a categorical head and a target critic:
    /// sum_a pi(a|x) (Q(x_aux, a) - alpha log pi(a|x)).
    fn discrete_soft_value(&self, head: &CategoricalPolicyHead, head_states: &Arr, q_states: &Arr, net: &Mlp) -> Vec<f64> {
        let n = head.n_actions;
        let q = self.q_table(net, q_states, n);
        let m = head_states.nrows();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row: Vec<f64> = head_states.row(i).to_vec();
            let lp = head.log_probs(&row);
            let mut v = 0.0;
            for a in 0..n {
                let p = lp[a].exp();
                v += p * (q[(i, a)] - self.alpha * lp[a]);
            }
            out.push(v);
        }
        out
    }

    /// Soft value via one reparameterized sample from a Gaussian head.
    fn gaussian_soft_value(
        &self,
        head: &GaussianPolicyHead,
        head_states: &Arr,
        q_states: &Arr,
        net: &Mlp,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let m = head_states.nrows();
        let k = head.action_dim();
        let mut actions = Array2::zeros((m, k));
        let mut logps = Vec::with_capacity(m);
        for i in 0..m {
            let row: Vec<f64> = head_states.row(i).to_vec();
            let (a, lp) = head.sample(&row, rng);
            match a {
                Action::Vector(v) => {
                    for (j, &x) in v.iter().enumerate() {
                        actions[(i, j)] = x;
                    }
                }
                Action::Discrete(_) => unreachable!(),
            }
            logps.push(lp);
        }
        let input =
            ndarray::concatenate(ndarray::Axis(1), &[q_states.view(), actions.view()]).unwrap();
        let q = net.forward(&input);
        (0..m)
            .map(|i| q[(i, 0)] - self.alpha * logps[i])
            .collect()
    }

    /// n-step TD targets: Y = sum gamma^i r_i + gamma^n min(Y1, Y2), where
    /// Y1 bootstraps through the auxiliary actor and target critic 1 and
    /// Y2 through the full-delay actor and target critic 2, both evaluated
    /// at the auxiliary successor state. Done records truncate the tail.
    pub fn td_target(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Vec<f64> {
        assert!(
            batch.rewards.iter().all(|r| r.is_finite()),
            "td_target needs a filled reward sequence"
        );
        let m = batch.len();
        let y1;
        let y2;
        match (&self.actor_aux, &self.actor_full) {
            (PolicyHead::Categorical(aux), PolicyHead::Categorical(full)) => {
                y1 = self.discrete_soft_value(aux, &batch.x_aux_next, &batch.x_aux_next, &self.target1);
                y2 = self.discrete_soft_value(full, &batch.x_next, &batch.x_aux_next, &self.target2);
            }
            (PolicyHead::Gaussian(aux), PolicyHead::Gaussian(full)) => {
                y1 = self.gaussian_soft_value(
                    aux,
                    &batch.x_aux_next,
                    &batch.x_aux_next,
                    &self.target1,
                    rng,
                );
                y2 = self.gaussian_soft_value(
                    full,
                    &batch.x_next,
                    &batch.x_aux_next,
                    &self.target2,
                    rng,
                );
            }
            _ => panic!("actor heads must share their action kind"),
        }
        (0..m)
            .map(|i| {
                let boot = y1[i].min(y2[i]);
                let rewards: Vec<f64> = batch.rewards.row(i).to_vec();
                nstep_return(&rewards, self.gamma, boot, batch.done[i])
            })
            .collect()
    }

    /// Regress both critics toward the targets under squared error.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64], lr: f64) -> f64 {
        let m = batch.len();
        assert_eq!(targets.len(), m);
        let input = ndarray::concatenate(
            ndarray::Axis(1),
            &[batch.x_aux.view(), batch.a_enc.view()],
        )
        .unwrap();
        let y = Arr::from_shape_vec((m, 1), targets.to_vec()).unwrap();

        let mut t = Tape::new();
        let v1 = self.critic1.vars(&mut t);
        let v2 = self.critic2.vars(&mut t);
        let x = t.constant(input);
        let yc = t.constant(y);
        let q1 = self.critic1.forward_var(&mut t, &v1, x);
        let q2 = self.critic2.forward_var(&mut t, &v2, x);
        let d1 = t.sub(q1, yc);
        let e1 = t.square(d1);
        let l1 = t.mean_all(e1);
        let d2 = t.sub(q2, yc);
        let e2 = t.square(d2);
        let l2 = t.mean_all(e2);
        let loss = t.add(l1, l2);
        let g1 = grad_params(&mut t, loss, &v1);
        let g2 = grad_params(&mut t, loss, &v2);
        let total = t.scalar_value(loss);
        self.opt_critic1
            .apply(&mut self.critic1.param_arrays_mut(), &g1, lr);
        self.opt_critic2
            .apply(&mut self.critic2.param_arrays_mut(), &g2, lr);
        total
    }

    /// Update exactly one actor, chosen by the seeded coin: the auxiliary
    /// actor when coin > 0.5, the full-delay actor otherwise.
    pub fn actor_update(
        &mut self,
        batch: &Batch,
        lr: f64,
        coin: f64,
        rng: &mut ChaCha8Rng,
    ) -> (ActorBranch, f64) {
        if coin > 0.5 {
            let loss = self.actor_branch_update(batch, lr, ActorBranch::Auxiliary, rng);
            (ActorBranch::Auxiliary, loss)
        } else {
            let loss = self.actor_branch_update(batch, lr, ActorBranch::FullDelay, rng);
            (ActorBranch::FullDelay, loss)
        }
    }

    fn actor_branch_update(
        &mut self,
        batch: &Batch,
        lr: f64,
        branch: ActorBranch,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let states = match branch {
            ActorBranch::Auxiliary => &batch.x_aux,
            ActorBranch::FullDelay => &batch.x,
        };
        let m = batch.len();
        let head = match branch {
            ActorBranch::Auxiliary => self.actor_aux.clone(),
            ActorBranch::FullDelay => self.actor_full.clone(),
        };
        let mut t = Tape::new();
        let vars = head.net().vars(&mut t);
        let sc = t.constant(states.clone());
        let c1 = self.critic1.const_vars(&mut t);
        let c2 = self.critic2.const_vars(&mut t);

        let loss = match &head {
            PolicyHead::Gaussian(g) => {
                let k = g.action_dim();
                let eps = Array2::from_shape_fn((m, k), |_| rng.sample::<f64, _>(StandardNormal));
                let (a_var, logp, _) = g.sample_var(&mut t, &vars, sc, &eps);
                let aux_c = t.constant(batch.x_aux.clone());
                let qin = t.concat_cols(aux_c, a_var);
                let q1 = self.critic1.forward_var(&mut t, &c1, qin);
                let q2 = self.critic2.forward_var(&mut t, &c2, qin);
                let qmin = t.min_elem(q1, q2);
                let ent = t.scale(logp, self.alpha);
                let obj = t.sub(ent, qmin);
                t.mean_all(obj)
            }
            PolicyHead::Categorical(cat) => {
                let n = cat.n_actions;
                // per-action Q values are constants (critic params frozen)
                let q1 = self.q_table(&self.critic1, &batch.x_aux, n);
                let q2 = self.q_table(&self.critic2, &batch.x_aux, n);
                let mut qmin = q1.clone();
                qmin.zip_mut_with(&q2, |a, &b| *a = a.min(b));
                let log_probs = cat.log_probs_var(&mut t, &vars, sc);
                let probs = t.exp(log_probs);
                let ent = t.scale(log_probs, self.alpha);
                let qc = t.constant(qmin);
                let adv = t.sub(ent, qc);
                let per = t.mul(probs, adv);
                let row = t.sum_axis1(per);
                t.mean_all(row)
            }
        };
        let grads = grad_params(&mut t, loss, &vars);
        let value = t.scalar_value(loss);
        match branch {
            ActorBranch::Auxiliary => {
                self.opt_actor_aux
                    .apply(&mut self.actor_aux.net_mut().param_arrays_mut(), &grads, lr);
            }
            ActorBranch::FullDelay => {
                self.opt_actor_full
                    .apply(&mut self.actor_full.net_mut().param_arrays_mut(), &grads, lr);
            }
        }
        value
    }

    /// target <- polyak * target + (1 - polyak) * online, elementwise.
    pub fn soft_update(&mut self) {
        soft_update_net(&mut self.target1, &self.critic1, self.polyak);
        soft_update_net(&mut self.target2, &self.critic2, self.polyak);
    }

    /// One full iteration: targets, critic regression, one actor branch,
    /// target blend.
    pub fn train_iteration(&mut self, batch: &Batch, lr: f64, rng: &mut ChaCha8Rng) -> PolicyOptStats {
        let targets = self.td_target(batch, rng);
        let critic_loss = self.critic_update(batch, &targets, lr);
        let coin: f64 = rng.gen();
        let (branch, actor_loss) = self.actor_update(batch, lr, coin, rng);
        self.soft_update();
        let mean_q = targets.iter().sum::<f64>() / targets.len() as f64;
        PolicyOptStats {
            critic_loss,
            actor_loss,
            branch,
            mean_q,
        }
    }

    /// Mean log-std of the full actor over a batch (diagnostic; NaN for
    /// discrete heads).
    pub fn mean_log_std(&self, states: &Arr) -> f64 {
        match &self.actor_full {
            PolicyHead::Gaussian(g) => {
                let out = g.net.forward(states);
                let k = g.action_dim();
                let mut acc = 0.0;
                let mut count = 0usize;
                for i in 0..out.nrows() {
                    for j in k..2 * k {
                        acc += out[(i, j)].clamp(-5.0, 2.0);
                        count += 1;
                    }
                }
                acc / count as f64
            }
            PolicyHead::Categorical(_) => f64::NAN,
        }
    }
}

pub fn soft_update_net(target: &mut Mlp, online: &Mlp, polyak: f64) {
    for (tgt, src) in target
        .param_arrays_mut()
        .into_iter()
        .zip(online.param_arrays())
    {
        tgt.zip_mut_with(src, |t, &s| *t = polyak * *t + (1.0 - polyak) * s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records_from_trace;
    use crate::delay::DelayedEnv;
    use crate::env::{chain_mdp, rng_from, Env, TabularEnv};

    fn chain_agent(nstep: usize, rng: &mut ChaCha8Rng) -> (TabularEnv, AuxDelayAgent) {
        let env = TabularEnv::new("chain", chain_mdp(5, 0.0), 12, 0.9);
        let x_dim = env.spec().state_dim + 2 * env.spec().action_dim;
        let x_aux_dim = env.spec().state_dim + env.spec().action_dim;
        let agent = AuxDelayAgent::new(
            x_dim,
            x_aux_dim,
            env.spec().action_kind.clone(),
            &[8, 8],
            &[8, 8],
            0.2,
            0.995,
            nstep,
            0.9,
            rng,
        );
        (env, agent)
    }

    fn chain_batch(env: &TabularEnv, nstep: usize, seed: u64) -> Batch {
        let mut denv = DelayedEnv::new(env, 2, seed);
        let mut rng = rng_from(seed ^ 0x5555);
        while !denv.is_done() {
            denv.step(&Action::Discrete(rng.gen_range(0..2)), rng.gen())
                .unwrap();
        }
        let recs = records_from_trace(denv.trace(), env, 2, 1, nstep, denv.trace().states.len());
        Batch::from_records(recs.iter())
    }

    #[test]
    fn nstep_return_arithmetic() {
        // rewards (1,1,1), gamma 0.9, bootstrap 10: 2.71 + 0.729 * 10 = 10
        let y = nstep_return(&[1.0, 1.0, 1.0], 0.9, 10.0, false);
        assert!((y - 10.0).abs() < 1e-12);
    }

    #[test]
    fn done_truncates_the_bootstrap() {
        let y = nstep_return(&[0.7, 0.0, 0.0], 0.9, 123.0, true);
        assert!((y - 0.7).abs() < 1e-15);
    }

    #[test]
    fn td_target_matches_exhaustive_hand_computation() {
        // deterministic 5-state chain, fixed (random) nets: recompute the
        // target with scalar loops over enumerated actions
        for nstep in [1usize, 2, 3] {
            let mut rng = rng_from(41 + nstep as u64);
            let (env, agent) = chain_agent(nstep, &mut rng);
            let batch = chain_batch(&env, nstep, 7);
            let got = agent.td_target(&batch, &mut rng_from(0));

            let (aux, full) = match (&agent.actor_aux, &agent.actor_full) {
                (PolicyHead::Categorical(a), PolicyHead::Categorical(f)) => (a, f),
                _ => unreachable!(),
            };
            for i in 0..batch.len() {
                let xa: Vec<f64> = batch.x_aux_next.row(i).to_vec();
                let xf: Vec<f64> = batch.x_next.row(i).to_vec();
                let mut y1 = 0.0;
                let mut y2 = 0.0;
                for a in 0..2usize {
                    let onehot = crate::env::one_hot(a, 2);
                    let mut qin = xa.clone();
                    qin.extend(&onehot);
                    let q1 = agent.target1.forward_row(&qin)[0];
                    let q2 = agent.target2.forward_row(&qin)[0];
                    let lp_aux = aux.log_probs(&xa)[a];
                    let lp_full = full.log_probs(&xf)[a];
                    y1 += lp_aux.exp() * (q1 - agent.alpha * lp_aux);
                    y2 += lp_full.exp() * (q2 - agent.alpha * lp_full);
                }
                let boot = y1.min(y2);
                let mut expect = 0.0;
                for j in 0..nstep {
                    expect += agent.gamma.powi(j as i32) * batch.rewards[(i, j)];
                }
                if !batch.done[i] {
                    expect += agent.gamma.powi(nstep as i32) * boot;
                }
                assert!(
                    (got[i] - expect).abs() < 1e-12,
                    "record {i} nstep {nstep}: {} vs {expect}",
                    got[i]
                );
            }
        }
    }

    #[test]
    fn critic_at_optimum_has_zero_gradient() {
        let mut rng = rng_from(3);
        let (env, mut agent) = chain_agent(1, &mut rng);
        // zero critics fit zero targets exactly; critic input is
        // x_aux (5 + 2) plus the one-hot action (2)
        agent.critic1 = Mlp::zeros(&[9, 4, 1]);
        agent.critic2 = Mlp::zeros(&[9, 4, 1]);
        agent.opt_critic1 = AdamState::new(&[(9, 4), (1, 4), (4, 1), (1, 1)]);
        agent.opt_critic2 = AdamState::new(&[(9, 4), (1, 4), (4, 1), (1, 1)]);
        let batch = chain_batch(&env, 1, 5);
        let before1 = agent.critic1.clone();
        let targets = vec![0.0; batch.len()];
        let loss = agent.critic_update(&batch, &targets, 1e-2);
        assert_eq!(loss, 0.0);
        for (a, b) in agent
            .critic1
            .param_arrays()
            .iter()
            .zip(before1.param_arrays())
        {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn critic_step_reduces_squared_error() {
        let mut rng = rng_from(9);
        let (env, mut agent) = chain_agent(1, &mut rng);
        let batch = chain_batch(&env, 1, 5);
        let targets: Vec<f64> = (0..batch.len()).map(|i| (i % 3) as f64).collect();
        let l0 = agent.critic_update(&batch, &targets, 1e-3);
        let mut last = l0;
        for _ in 0..50 {
            last = agent.critic_update(&batch, &targets, 1e-3);
        }
        assert!(last < l0, "{last} !< {l0}");
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = rng_from(13);
        let (env, agent) = chain_agent(1, &mut rng);
        let batch = chain_batch(&env, 1, 11);
        let targets: Vec<f64> = (0..batch.len()).map(|i| 0.1 * i as f64).collect();
        let input = ndarray::concatenate(
            ndarray::Axis(1),
            &[batch.x_aux.view(), batch.a_enc.view()],
        )
        .unwrap();
        let y = Arr::from_shape_vec((batch.len(), 1), targets.clone()).unwrap();

        let mut net = agent.critic1.clone();
        let analytic = {
            let mut t = Tape::new();
            let vars = net.vars(&mut t);
            let x = t.constant(input.clone());
            let yc = t.constant(y.clone());
            let q = net.forward_var(&mut t, &vars, x);
            let d = t.sub(q, yc);
            let e = t.square(d);
            let loss = t.mean_all(e);
            grad_params(&mut t, loss, &vars)
        };
        let loss_of = |m: &Mlp| {
            let q = m.forward(&input);
            (&q - &y).mapv(|d| d * d).mean().unwrap()
        };
        assert!(crate::nn::fdcheck::check_param_grads(
            &mut net, &analytic, loss_of, 1e-4
        ));
    }

    #[test]
    fn actor_branches_are_isolated() {
        let mut rng = rng_from(17);
        let (env, mut agent) = chain_agent(1, &mut rng);
        let batch = chain_batch(&env, 1, 3);
        let full_before = agent.actor_full.net().clone();
        let (branch, _) = agent.actor_update(&batch, 1e-3, 0.9, &mut rng_from(0));
        assert_eq!(branch, ActorBranch::Auxiliary);
        for (a, b) in agent
            .actor_full
            .net()
            .param_arrays()
            .iter()
            .zip(full_before.param_arrays())
        {
            assert_eq!(*a, b);
        }
        let aux_before = agent.actor_aux.net().clone();
        let (branch, _) = agent.actor_update(&batch, 1e-3, 0.1, &mut rng_from(0));
        assert_eq!(branch, ActorBranch::FullDelay);
        for (a, b) in agent
            .actor_aux
            .net()
            .param_arrays()
            .iter()
            .zip(aux_before.param_arrays())
        {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn discrete_actor_gradients_match_finite_differences() {
        let mut rng = rng_from(19);
        let (env, agent) = chain_agent(1, &mut rng);
        let batch = chain_batch(&env, 1, 13);
        for branch in [ActorBranch::Auxiliary, ActorBranch::FullDelay] {
            let (head, states) = match branch {
                ActorBranch::Auxiliary => (agent.actor_aux.clone(), batch.x_aux.clone()),
                ActorBranch::FullDelay => (agent.actor_full.clone(), batch.x.clone()),
            };
            let cat = match &head {
                PolicyHead::Categorical(c) => c.clone(),
                _ => unreachable!(),
            };
            let q1 = agent.q_table(&agent.critic1, &batch.x_aux, 2);
            let q2 = agent.q_table(&agent.critic2, &batch.x_aux, 2);
            let mut qmin = q1.clone();
            qmin.zip_mut_with(&q2, |a, &b| *a = a.min(b));

            let analytic = {
                let mut t = Tape::new();
                let vars = cat.net.vars(&mut t);
                let sc = t.constant(states.clone());
                let lp = cat.log_probs_var(&mut t, &vars, sc);
                let probs = t.exp(lp);
                let ent = t.scale(lp, agent.alpha);
                let qc = t.constant(qmin.clone());
                let adv = t.sub(ent, qc);
                let per = t.mul(probs, adv);
                let row = t.sum_axis1(per);
                let loss = t.mean_all(row);
                grad_params(&mut t, loss, &vars)
            };
            let mut probe = cat.net.clone();
            let loss_of = |net: &Mlp| {
                let head = CategoricalPolicyHead {
                    net: net.clone(),
                    n_actions: 2,
                };
                let mut acc = 0.0;
                for i in 0..states.nrows() {
                    let row: Vec<f64> = states.row(i).to_vec();
                    let lp = head.log_probs(&row);
                    for a in 0..2 {
                        acc += lp[a].exp() * (agent.alpha * lp[a] - qmin[(i, a)]);
                    }
                }
                acc / states.nrows() as f64
            };
            assert!(
                crate::nn::fdcheck::check_param_grads(&mut probe, &analytic, loss_of, 1e-4),
                "branch {branch:?}"
            );
        }
    }

    #[test]
    fn gaussian_actor_gradient_matches_finite_differences_with_frozen_noise() {
        let mut rng = rng_from(29);
        let env = crate::env::PointMassEnv::new(20, 0.99, 0.0);
        let x_dim = 1 + 2; // delta 2
        let x_aux_dim = 1 + 1; // delta_aux 1
        let agent = AuxDelayAgent::new(
            x_dim,
            x_aux_dim,
            env.spec().action_kind.clone(),
            &[6],
            &[6],
            0.2,
            0.995,
            1,
            0.99,
            &mut rng,
        );
        let m = 4usize;
        let states = Arr::from_shape_fn((m, x_dim), |_| rng.gen_range(-1.0..1.0));
        let x_aux = Arr::from_shape_fn((m, x_aux_dim), |_| rng.gen_range(-1.0..1.0));
        let eps = Arr::from_shape_fn((m, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let g = match &agent.actor_full {
            PolicyHead::Gaussian(g) => g.clone(),
            _ => unreachable!(),
        };

        let build_loss = |net: &Mlp, t: &mut Tape, trainable: bool| {
            let head = GaussianPolicyHead {
                net: net.clone(),
                low: g.low.clone(),
                high: g.high.clone(),
            };
            let vars = if trainable {
                head.net.vars(t)
            } else {
                head.net.const_vars(t)
            };
            let sc = t.constant(states.clone());
            let (a_var, logp, _) = head.sample_var(t, &vars, sc, &eps);
            let aux_c = t.constant(x_aux.clone());
            let qin = t.concat_cols(aux_c, a_var);
            let c1 = agent.critic1.const_vars(t);
            let c2 = agent.critic2.const_vars(t);
            let q1 = agent.critic1.forward_var(t, &c1, qin);
            let q2 = agent.critic2.forward_var(t, &c2, qin);
            let qmin = t.min_elem(q1, q2);
            let ent = t.scale(logp, agent.alpha);
            let obj = t.sub(ent, qmin);
            let loss = t.mean_all(obj);
            (loss, vars)
        };

        let analytic = {
            let mut t = Tape::new();
            let (loss, vars) = build_loss(&g.net, &mut t, true);
            grad_params(&mut t, loss, &vars)
        };
        let mut probe = g.net.clone();
        let loss_of = |net: &Mlp| {
            let mut t = Tape::new();
            let (loss, _) = build_loss(net, &mut t, false);
            t.scalar_value(loss)
        };
        assert!(crate::nn::fdcheck::check_param_grads(
            &mut probe, &analytic, loss_of, 1e-4
        ));
    }

    #[test]
    fn zero_critics_turn_the_update_into_entropy_ascent() {
        let mut rng = rng_from(31);
        let env = crate::env::PointMassEnv::new(20, 0.99, 0.0);
        let mut agent = AuxDelayAgent::new(
            3,
            2,
            env.spec().action_kind.clone(),
            &[16],
            &[16],
            0.5,
            0.995,
            1,
            0.99,
            &mut rng,
        );
        agent.critic1 = Mlp::zeros(&[3, 4, 1]);
        agent.critic2 = Mlp::zeros(&[3, 4, 1]);
        let m = 32;
        let states = Arr::from_shape_fn((m, 3), |_| rng.gen_range(-1.0..1.0));
        let x_aux = Arr::from_shape_fn((m, 2), |_| rng.gen_range(-1.0..1.0));
        let batch = Batch {
            x: states.clone(),
            x_aux: x_aux.clone(),
            a_enc: Arr::zeros((m, 1)),
            a_idx: vec![0; m],
            rewards: Arr::zeros((m, 1)),
            x_next: states.clone(),
            x_aux_next: x_aux,
            done: vec![false; m],
        };
        let before = agent.mean_log_std(&states);
        for _ in 0..100 {
            agent.actor_update(&batch, 3e-3, 0.1, &mut rng);
        }
        let after = agent.mean_log_std(&states);
        assert!(after > before, "log std did not increase: {before} -> {after}");
    }

    #[test]
    fn soft_update_endpoints_and_geometric_rate() {
        let mut rng = rng_from(37);
        let (_, mut agent) = chain_agent(1, &mut rng);
        // polyak 0: hard copy
        agent.polyak = 0.0;
        agent.soft_update();
        for (t, c) in agent
            .target1
            .param_arrays()
            .iter()
            .zip(agent.critic1.param_arrays())
        {
            assert_eq!(*t, c);
        }
        // polyak 1: frozen
        let frozen = agent.target2.clone();
        agent.polyak = 1.0;
        agent.soft_update();
        for (t, f) in agent
            .target2
            .param_arrays()
            .iter()
            .zip(frozen.param_arrays())
        {
            assert_eq!(*t, f);
        }
        // geometric convergence of the gap at rate polyak^k
        let mut rng2 = rng_from(38);
        let (_, mut agent) = chain_agent(1, &mut rng2);
        agent.polyak = 0.995;
        agent.target1.weights[0][(0, 0)] = agent.critic1.weights[0][(0, 0)] + 1.0;
        let k = 40;
        for _ in 0..k {
            agent.soft_update();
        }
        let gap = agent.target1.weights[0][(0, 0)] - agent.critic1.weights[0][(0, 0)];
        let expect = 0.995f64.powi(k);
        assert!((gap - expect).abs() < 1e-12, "{gap} vs {expect}");
    }

    #[test]
    fn targets_stay_in_the_online_parameter_hull() {
        let mut rng = rng_from(43);
        let (env, mut agent) = chain_agent(1, &mut rng);
        let batch = chain_batch(&env, 1, 3);
        let mut lo = agent.target1.weights[0].clone();
        let mut hi = agent.target1.weights[0].clone();
        for step in 0..30 {
            let mut r = rng_from(100 + step);
            let targets: Vec<f64> = (0..batch.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
            agent.critic_update(&batch, &targets, 1e-3);
            lo.zip_mut_with(&agent.critic1.weights[0], |l, &c| *l = l.min(c));
            hi.zip_mut_with(&agent.critic1.weights[0], |h, &c| *h = h.max(c));
            agent.soft_update();
            let t = &agent.target1.weights[0];
            for ((&t, &l), &h) in t.iter().zip(lo.iter()).zip(hi.iter()) {
                assert!(t >= l - 1e-12 && t <= h + 1e-12);
            }
        }
    }

    #[test]
    fn one_iteration_touches_one_actor_and_both_critics() {
        let mut rng = rng_from(47);
        let (env, mut agent) = chain_agent(1, &mut rng);
        let batch = chain_batch(&env, 1, 3);
        let full0 = agent.actor_full.net().clone();
        let aux0 = agent.actor_aux.net().clone();
        let c10 = agent.critic1.clone();
        let c20 = agent.critic2.clone();
        agent.train_iteration(&batch, 1e-3, &mut rng);
        let changed = |a: &Mlp, b: &Mlp| {
            a.param_arrays()
                .iter()
                .zip(b.param_arrays())
                .any(|(x, y)| *x != y)
        };
        assert!(changed(&agent.critic1, &c10));
        assert!(changed(&agent.critic2, &c20));
        let full_changed = changed(agent.actor_full.net(), &full0);
        let aux_changed = changed(agent.actor_aux.net(), &aux0);
        assert!(full_changed ^ aux_changed, "exactly one actor must change");
    }
}
