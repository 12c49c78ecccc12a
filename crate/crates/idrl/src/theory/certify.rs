//! Bound certificates: one checked inequality per certificate, with both
//! sides, the slack, and the inputs that produced them.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::delay::{belief_exact, AugmentedState};
use crate::env::{Action, Env, State, TabularMdp};
use crate::nn::{Mlp, Tape};

use super::augmented::{AugmentedSpace, ObsPolicyTable, PolicyTable};
use super::w1::w1_discrete;
use super::TheoryError;

pub const PASS_SLACK: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// W1(b(.|x) || delta_obs) <= delta * L_T
    Belief,
    /// |E_b[R] - R(obs, a)| <= delta * L_R * L_T
    Reward,
    /// max_x |V_aug - V_obs| <= (R_max + delta L_R L_T) / (1 - gamma)
    Performance,
}

impl BoundKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::Belief => "belief",
            BoundKind::Reward => "reward",
            BoundKind::Performance => "performance",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundCertificate {
    pub kind: BoundKind,
    /// Which instance this certificate checked (augmented index, action).
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub delta: usize,
    pub l_t: f64,
    pub l_r: f64,
    pub gamma: f64,
    pub r_max: f64,
}

impl BoundCertificate {
    fn new(
        kind: BoundKind,
        label: String,
        lhs: f64,
        rhs: f64,
        delta: usize,
        l_t: f64,
        l_r: f64,
        gamma: f64,
        r_max: f64,
    ) -> Self {
        let slack = rhs - lhs;
        BoundCertificate {
            kind,
            label,
            lhs,
            rhs,
            slack,
            pass: slack >= PASS_SLACK,
            delta,
            l_t,
            l_r,
            gamma,
            r_max,
        }
    }
}

/// Belief-drift certificates for every reachable augmented state with
/// delay 1..=delta_max. `l_t_override` substitutes a corrupted constant
/// (negative-control runs); `None` uses the exact one.
pub fn certify_belief_bound(
    mdp: &TabularMdp,
    delta_max: usize,
    l_t_override: Option<f64>,
) -> Result<Vec<BoundCertificate>, TheoryError> {
    let l_t = l_t_override.unwrap_or_else(|| mdp.time_lipschitz());
    let coords = mdp.embedding().to_vec();
    let mut out = Vec::new();
    for delta in 1..=delta_max {
        let space = AugmentedSpace::new(mdp, delta)?;
        for idx in 0..space.size() {
            let (s, _) = space.decode(idx);
            let belief = space.belief(idx);
            let mut dirac = vec![0.0; mdp.n_states()];
            dirac[s] = 1.0;
            let lhs = w1_discrete(&belief, &dirac, &coords)?;
            let rhs = delta as f64 * l_t;
            out.push(BoundCertificate::new(
                BoundKind::Belief,
                format!("delta={delta} x={idx}"),
                lhs,
                rhs,
                delta,
                l_t,
                f64::NAN,
                f64::NAN,
                f64::NAN,
            ));
        }
    }
    Ok(out)
}

/// Reward-difference certificates over every (augmented state, action).
///
/// `reward_of(s, window, a)` evaluates the reward function under test at a
/// true state with the window context fixed; for the plain tabular reward
/// it ignores the window. `l_r` is that function's state-direction
/// Lipschitz constant under the embedding metric.
pub fn certify_reward_bound(
    mdp: &TabularMdp,
    delta: usize,
    reward_of: &dyn Fn(usize, &[usize], usize) -> f64,
    l_r: f64,
) -> Result<Vec<BoundCertificate>, TheoryError> {
    let l_t = mdp.time_lipschitz();
    let space = AugmentedSpace::new(mdp, delta)?;
    let mut out = Vec::new();
    for idx in 0..space.size() {
        let (s_obs, window) = space.decode(idx);
        let belief = space.belief(idx);
        for a in 0..mdp.n_actions() {
            let expected: f64 = belief
                .iter()
                .enumerate()
                .map(|(s, &p)| p * reward_of(s, &window, a))
                .sum();
            let lhs = (expected - reward_of(s_obs, &window, a)).abs();
            let rhs = delta as f64 * l_r * l_t;
            out.push(BoundCertificate::new(
                BoundKind::Reward,
                format!("delta={delta} x={idx} a={a}"),
                lhs,
                rhs,
                delta,
                l_t,
                l_r,
                f64::NAN,
                mdp.max_abs_reward(),
            ));
        }
    }
    Ok(out)
}

/// Monte-Carlo reward certificates for continuous environments: the belief
/// expectation is estimated with particle rollouts through the window.
#[allow(clippy::too_many_arguments)]
pub fn certify_reward_bound_mc(
    env: &dyn Env,
    delta: usize,
    reward_of: &dyn Fn(&State, &[Action], &Action) -> f64,
    l_r: f64,
    l_t: f64,
    n_states_sampled: usize,
    n_particles: usize,
    seed: u64,
) -> Result<Vec<BoundCertificate>, crate::delay::DelayError> {
    let mut rng = crate::env::rng_from(seed);
    let mut out = Vec::new();
    for k in 0..n_states_sampled {
        let obs = env.reset(rng.gen());
        let window: Vec<Action> = (0..delta).map(|_| env.random_action(&mut rng)).collect();
        let action = env.random_action(&mut rng);
        let x = AugmentedState {
            delayed_obs: obs.clone(),
            window: window.clone(),
        };
        let particles = match crate::delay::belief_mc(env, &x, n_particles, rng.gen())? {
            crate::delay::BeliefDist::Particles(p) => p,
            _ => unreachable!(),
        };
        let expected: f64 = particles
            .iter()
            .map(|s| reward_of(s, &window, &action))
            .sum::<f64>()
            / particles.len() as f64;
        let lhs = (expected - reward_of(&obs, &window, &action)).abs();
        let rhs = delta as f64 * l_r * l_t;
        out.push(BoundCertificate::new(
            BoundKind::Reward,
            format!("delta={delta} sample={k}"),
            lhs,
            rhs,
            delta,
            l_t,
            l_r,
            f64::NAN,
            env.spec().r_max,
        ));
    }
    Ok(out)
}

/// Performance-difference certificate: exact values of an augmented-state
/// policy (belief-averaged reward) and a delayed-observation policy
/// (observation reward), compared in max norm over the augmented space.
pub fn certify_perf_bound(
    mdp: &TabularMdp,
    delta: usize,
    policy_aug: &PolicyTable,
    policy_obs: &ObsPolicyTable,
    gamma: f64,
) -> Result<BoundCertificate, TheoryError> {
    let space = AugmentedSpace::new(mdp, delta)?;
    let r_delayed = |x: usize, a: usize| space.delayed_reward(x, a);
    let r_obs = |x: usize, a: usize| space.obs_reward(x, a);
    let p_aug = |x: usize| policy_aug.row(x);
    let p_obs = |x: usize| policy_obs.lifted(&space, x);

    let v_aug = space.policy_value_solve(&r_delayed, &p_aug, gamma);
    let v_obs = space.policy_value_solve(&r_obs, &p_obs, gamma);
    // value iteration cross-check of the linear solve
    let v_aug_vi = space.policy_value_vi(&r_delayed, &p_aug, gamma)?;
    for (a, b) in v_aug.iter().zip(&v_aug_vi) {
        assert!(
            (a - b).abs() < 1e-8,
            "linear solve and value iteration disagree: {a} vs {b}"
        );
    }

    let lhs = v_aug
        .iter()
        .zip(&v_obs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let l_t = mdp.time_lipschitz();
    let l_r = mdp.reward_lipschitz();
    let r_max = mdp.max_abs_reward();
    let rhs = (r_max + delta as f64 * l_r * l_t) / (1.0 - gamma);
    Ok(BoundCertificate::new(
        BoundKind::Performance,
        format!("delta={delta}"),
        lhs,
        rhs,
        delta,
        l_t,
        l_r,
        gamma,
        r_max,
    ))
}

/// Empirical state-direction Lipschitz constant of a scalar MLP: the max
/// input-gradient norm over the state columns across sampled points,
/// inflated by 10%.
pub fn estimate_mlp_state_lipschitz(net: &Mlp, points: &Array2<f64>, state_cols: usize) -> f64 {
    let mut t = Tape::new();
    let vars = net.const_vars(&mut t);
    let x = t.leaf(points.clone());
    let out = net.forward_var(&mut t, &vars, x);
    let total = t.sum_all(out);
    let g = t.backward(total, &[x])[0];
    let grads = t.value(g);
    let mut max_norm = 0.0f64;
    for i in 0..grads.nrows() {
        let norm: f64 = (0..state_cols)
            .map(|j| grads[(i, j)] * grads[(i, j)])
            .sum::<f64>()
            .sqrt();
        max_norm = max_norm.max(norm);
    }
    max_norm * 1.1
}

/// One CSV row per certificate.
pub fn certificates_csv(certs: &[BoundCertificate]) -> String {
    let mut out =
        String::from("kind,label,lhs,rhs,slack,pass,delta,l_t,l_r,gamma,r_max\n");
    for c in certs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            c.kind.name(),
            c.label,
            c.lhs,
            c.rhs,
            c.slack,
            c.pass,
            c.delta,
            c.l_t,
            c.l_r,
            c.gamma,
            c.r_max
        ));
    }
    out
}

/// Aggregate report: counts and worst slack per bound kind.
pub fn certificates_summary_json(certs: &[BoundCertificate]) -> String {
    let mut per_kind = serde_json::Map::new();
    for kind in [BoundKind::Belief, BoundKind::Reward, BoundKind::Performance] {
        let of_kind: Vec<&BoundCertificate> =
            certs.iter().filter(|c| c.kind == kind).collect();
        if of_kind.is_empty() {
            continue;
        }
        let failures = of_kind.iter().filter(|c| !c.pass).count();
        let min_slack = of_kind
            .iter()
            .map(|c| c.slack)
            .fold(f64::INFINITY, f64::min);
        per_kind.insert(
            kind.name().to_string(),
            serde_json::json!({
                "total": of_kind.len(),
                "failures": failures,
                "min_slack": min_slack,
            }),
        );
    }
    let total_failures = certs.iter().filter(|c| !c.pass).count();
    let report = serde_json::json!({
        "total": certs.len(),
        "failures": total_failures,
        "per_kind": per_kind,
    });
    serde_json::to_string_pretty(&report).expect("report serialization")
}
