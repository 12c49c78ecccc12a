//! Torque-limited pendulum stabilized around the upright position.
//!
//! State is (angle from upright, angular velocity), integrated with a
//! semi-implicit Euler step. The angle is clamped (not wrapped) so the
//! state stays in a box and the declared Lipschitz constants are valid
//! under the plain Euclidean metric.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    check_action, clamp_action, rng_from, Action, ActionKind, Env, EnvError, EnvSpec, Lipschitz,
    LipschitzSource, State, Step,
};

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    spec: EnvSpec,
    pub dt: f64,
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub damping: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub max_angle: f64,
    pub init_angle: f64,
    pub init_speed: f64,
    /// Std of Gaussian noise added to the angular velocity each step.
    pub noise_std: f64,
}

impl PendulumEnv {
    pub fn new(horizon: usize, gamma: f64, noise_std: f64) -> Self {
        let max_torque = 8.0;
        let spec = EnvSpec {
            state_dim: 2,
            action_dim: 1,
            action_kind: ActionKind::Continuous {
                low: vec![-max_torque],
                high: vec![max_torque],
            },
            horizon,
            gamma,
            r_max: 1.0,
        };
        Self {
            spec,
            dt: 0.05,
            gravity: 10.0,
            length: 1.0,
            mass: 1.0,
            damping: 0.1,
            max_torque,
            max_speed: 8.0,
            max_angle: 2.0 * std::f64::consts::PI,
            init_angle: 0.8,
            init_speed: 1.0,
            noise_std,
        }
    }

    fn reward_of(&self, theta: f64, omega: f64, torque: f64) -> f64 {
        (-(theta * theta + 0.1 * omega * omega + 0.001 * torque * torque)).exp()
    }

    fn max_accel(&self) -> f64 {
        self.gravity / self.length
            + self.max_torque / (self.mass * self.length * self.length)
            + self.damping * self.max_speed
    }
}

impl Env for PendulumEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> State {
        let mut rng = rng_from(seed);
        let theta = rng.gen_range(-self.init_angle..=self.init_angle);
        let omega = rng.gen_range(-self.init_speed..=self.init_speed);
        State::Vector(vec![theta, omega])
    }

    fn step(&self, state: &State, action: &Action, noise_seed: u64) -> Result<Step, EnvError> {
        check_action(&self.spec, action)?;
        let torque = match action {
            Action::Vector(v) => clamp_action(&self.spec.action_kind, v)[0],
            Action::Discrete(_) => unreachable!("checked above"),
        };
        let s = state.as_vec();
        if s.len() != 2 {
            return Err(EnvError::StateShape {
                expected: 2,
                got: s.len(),
            });
        }
        let (theta, omega) = (s[0], s[1]);
        let accel = (self.gravity / self.length) * theta.sin()
            + torque / (self.mass * self.length * self.length)
            - self.damping * omega;
        let mut omega_next = omega + self.dt * accel;
        if self.noise_std > 0.0 {
            let mut rng = rng_from(noise_seed);
            let eps: f64 = rng.sample(StandardNormal);
            omega_next += self.noise_std * eps;
        }
        omega_next = omega_next.clamp(-self.max_speed, self.max_speed);
        let theta_next = (theta + self.dt * omega_next).clamp(-self.max_angle, self.max_angle);
        Ok(Step {
            next_state: State::Vector(vec![theta_next, omega_next]),
            reward: self.reward_of(theta, omega, torque),
            terminal: false,
        })
    }

    fn reward(&self, state: &State, action: &Action) -> f64 {
        let s = state.as_vec();
        let torque = match action {
            Action::Vector(v) => clamp_action(&self.spec.action_kind, v)[0],
            Action::Discrete(_) => 0.0,
        };
        self.reward_of(s[0], s[1], torque)
    }

    fn lipschitz_constants(&self) -> Option<Lipschitz> {
        // Per-step displacement bounds: |d theta| <= dt * max_speed and
        // |d omega| <= dt * max_accel + E|noise|, with E|N(0,s)| = s*sqrt(2/pi).
        let noise_mean_abs = self.noise_std * (2.0 / std::f64::consts::PI).sqrt();
        let d_theta = self.dt * self.max_speed;
        let d_omega = self.dt * self.max_accel() + noise_mean_abs;
        let l_t = (d_theta * d_theta + d_omega * d_omega).sqrt();
        // Safe over-bound on the reward gradient norm over the state box.
        let l_r = 1.0;
        Some(Lipschitz {
            l_t,
            l_r,
            source: LipschitzSource::Declared,
        })
    }

    fn zero_action(&self) -> Action {
        Action::Vector(vec![0.0])
    }

    fn encode_state(&self, s: &State) -> Vec<f64> {
        s.as_vec().to_vec()
    }

    fn encode_action(&self, a: &Action) -> Vec<f64> {
        match a {
            Action::Vector(v) => v.clone(),
            Action::Discrete(_) => panic!("pendulum actions are continuous"),
        }
    }

    fn decode_state(&self, frame: &[f64]) -> Result<State, EnvError> {
        if frame.len() != 2 {
            return Err(EnvError::StateShape {
                expected: 2,
                got: frame.len(),
            });
        }
        Ok(State::Vector(frame.to_vec()))
    }

    fn decode_action(&self, frame: &[f64]) -> Result<Action, EnvError> {
        if frame.len() != 1 {
            return Err(EnvError::ActionShape {
                expected: 1,
                got: frame.len(),
            });
        }
        Ok(Action::Vector(frame.to_vec()))
    }

    fn id(&self) -> &str {
        "pendulum"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_lies_in_declared_box() {
        let env = PendulumEnv::new(200, 0.99, 0.0);
        for seed in [7u64, 0, 1, 42, 91] {
            let s = env.reset(seed);
            let v = s.as_vec();
            assert!(v[0].abs() <= env.init_angle);
            assert!(v[1].abs() <= env.init_speed);
        }
    }

    #[test]
    fn upright_equilibrium_is_a_fixed_point() {
        let env = PendulumEnv::new(200, 0.99, 0.0);
        let s = State::Vector(vec![0.0, 0.0]);
        let out = env.step(&s, &Action::Vector(vec![0.0]), 0).unwrap();
        let v = out.next_state.as_vec();
        assert!(v[0].abs() < 1e-9 && v[1].abs() < 1e-9);
    }

    #[test]
    fn actions_are_clamped_before_dynamics() {
        let env = PendulumEnv::new(200, 0.99, 0.0);
        let s = State::Vector(vec![0.1, 0.0]);
        let a = env.step(&s, &Action::Vector(vec![1e9]), 3).unwrap();
        let b = env
            .step(&s, &Action::Vector(vec![env.max_torque]), 3)
            .unwrap();
        assert_eq!(a.next_state, b.next_state);
        assert_eq!(a.reward, b.reward);
    }

    #[test]
    fn noise_free_step_is_deterministic_across_seeds() {
        let env = PendulumEnv::new(200, 0.99, 0.0);
        let s = State::Vector(vec![0.4, -0.2]);
        let a = Action::Vector(vec![1.0]);
        let first = env.step(&s, &a, 0).unwrap();
        let second = env.step(&s, &a, 12345).unwrap();
        assert_eq!(first.next_state, second.next_state);
    }

    #[test]
    fn reward_is_bounded_by_r_max() {
        let env = PendulumEnv::new(200, 0.99, 0.0);
        let mut rng = super::super::rng_from(5);
        for _ in 0..1000 {
            let s = State::Vector(vec![rng.gen_range(-6.0..6.0), rng.gen_range(-8.0..8.0)]);
            let a = Action::Vector(vec![rng.gen_range(-8.0..8.0)]);
            let r = env.reward(&s, &a);
            assert!(r.abs() <= env.spec().r_max);
        }
    }
}
