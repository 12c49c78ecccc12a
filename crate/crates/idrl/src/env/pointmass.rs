//! 1-D point mass under direct velocity control with quadratic cost.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    check_action, clamp_action, rng_from, Action, ActionKind, Env, EnvError, EnvSpec, Lipschitz,
    LipschitzSource, State, Step,
};

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    spec: EnvSpec,
    pub dt: f64,
    pub bound: f64,
    pub init_range: f64,
    pub noise_std: f64,
}

impl PointMassEnv {
    pub fn new(horizon: usize, gamma: f64, noise_std: f64) -> Self {
        let bound = 3.0;
        let spec = EnvSpec {
            state_dim: 1,
            action_dim: 1,
            action_kind: ActionKind::Continuous {
                low: vec![-1.0],
                high: vec![1.0],
            },
            horizon,
            gamma,
            // |r| = s^2 + 0.1 a^2 <= 9 + 0.1 over the clamped domain
            r_max: bound * bound + 0.1,
        };
        Self {
            spec,
            dt: 0.05,
            bound,
            init_range: 1.5,
            noise_std,
        }
    }

    fn reward_of(&self, s: f64, a: f64) -> f64 {
        -(s * s + 0.1 * a * a)
    }
}

impl Env for PointMassEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> State {
        let mut rng = rng_from(seed);
        State::Vector(vec![rng.gen_range(-self.init_range..=self.init_range)])
    }

    fn step(&self, state: &State, action: &Action, noise_seed: u64) -> Result<Step, EnvError> {
        check_action(&self.spec, action)?;
        let a = match action {
            Action::Vector(v) => clamp_action(&self.spec.action_kind, v)[0],
            Action::Discrete(_) => unreachable!("checked above"),
        };
        let s = state.as_vec();
        if s.len() != 1 {
            return Err(EnvError::StateShape {
                expected: 1,
                got: s.len(),
            });
        }
        let mut next = s[0] + a * self.dt;
        if self.noise_std > 0.0 {
            let mut rng = rng_from(noise_seed);
            let eps: f64 = rng.sample(StandardNormal);
            next += self.noise_std * eps;
        }
        next = next.clamp(-self.bound, self.bound);
        Ok(Step {
            next_state: State::Vector(vec![next]),
            reward: self.reward_of(s[0], a),
            terminal: false,
        })
    }

    fn reward(&self, state: &State, action: &Action) -> f64 {
        let a = match action {
            Action::Vector(v) => clamp_action(&self.spec.action_kind, v)[0],
            Action::Discrete(_) => 0.0,
        };
        self.reward_of(state.as_vec()[0], a)
    }

    fn lipschitz_constants(&self) -> Option<Lipschitz> {
        let noise_mean_abs = self.noise_std * (2.0 / std::f64::consts::PI).sqrt();
        Some(Lipschitz {
            l_t: self.dt + noise_mean_abs,
            l_r: 2.0 * self.bound,
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
            Action::Discrete(_) => panic!("point-mass actions are continuous"),
        }
    }

    fn decode_state(&self, frame: &[f64]) -> Result<State, EnvError> {
        if frame.len() != 1 {
            return Err(EnvError::StateShape {
                expected: 1,
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
        "pointmass"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_definitional() {
        let env = PointMassEnv::new(100, 0.99, 0.0);
        let out = env
            .step(&State::Vector(vec![0.0]), &Action::Vector(vec![1.0]), 0)
            .unwrap();
        assert_eq!(out.next_state.as_vec()[0], 0.05);
    }

    #[test]
    fn quadratic_cost_sign() {
        let env = PointMassEnv::new(100, 0.99, 0.0);
        assert_eq!(
            env.reward(&State::Vector(vec![2.0]), &Action::Vector(vec![1.0])),
            -(4.0 + 0.1)
        );
    }

    #[test]
    fn position_stays_in_bounds() {
        let env = PointMassEnv::new(100, 0.99, 0.5);
        let mut s = State::Vector(vec![2.9]);
        for seed in 0..200 {
            let out = env.step(&s, &Action::Vector(vec![1.0]), seed).unwrap();
            s = out.next_state;
            assert!(s.as_vec()[0].abs() <= env.bound);
        }
    }
}
