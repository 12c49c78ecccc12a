//! Run configuration: a single TOML file with one section per subsystem.
//! Every field has a code-side default; the fully resolved configuration
//! is echoed next to the run outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{chain_mdp, grid5_mdp, Env, PendulumEnv, PointMassEnv, TabularEnv};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown environment id {0:?} (known: chain, grid5, pendulum, pointmass)")]
    UnknownEnv(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub warmup_steps: usize,
    pub checkpoint_interval: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            total_steps: 100_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            warmup_steps: 1_000,
            checkpoint_interval: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub id: String,
    /// Overrides the environment's default episode length.
    pub horizon: Option<usize>,
    /// Overrides the environment's default discount.
    pub gamma: Option<f64>,
    pub noise_std: f64,
    pub chain_states: usize,
    pub chain_slip: f64,
    pub grid_slip: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            id: "pendulum".into(),
            horizon: None,
            gamma: None,
            noise_std: 0.0,
            chain_states: 6,
            chain_slip: 0.1,
            grid_slip: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySection {
    pub delta: usize,
    pub delta_aux: usize,
    /// n-step span; defaults to max(1, delta - delta_aux).
    pub nstep: Option<usize>,
}

impl Default for DelaySection {
    fn default() -> Self {
        DelaySection {
            delta: 2,
            delta_aux: 1,
            nstep: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetsSection {
    pub reward_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for NetsSection {
    fn default() -> Self {
        NetsSection {
            reward_hidden: vec![64, 64],
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscSection {
    pub lambda_gp: f64,
    pub lambda_ent: f64,
    pub delta_margin: f64,
    pub lr: f64,
}

impl Default for DiscSection {
    fn default() -> Self {
        DiscSection {
            lambda_gp: 10.0,
            lambda_ent: 1e-3,
            delta_margin: 1e-7,
            lr: 3e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub alpha: f64,
    pub polyak: f64,
    pub lr: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            alpha: 0.2,
            polyak: 0.995,
            lr: 3e-4,
            batch: 256,
            buffer_capacity: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertSection {
    pub path: Option<String>,
    pub n_traj: usize,
    /// "deterministic" rolls mean actions; "stochastic" samples.
    pub rollout: String,
}

impl Default for ExpertSection {
    fn default() -> Self {
        ExpertSection {
            path: None,
            n_traj: 100,
            rollout: "stochastic".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for BcSection {
    fn default() -> Self {
        BcSection {
            epochs: 40,
            lr: 1e-3,
            batch: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    /// Number of seeded random MDPs in the certification suite.
    pub random_mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub delta_max: usize,
    pub gamma: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection {
            random_mdps: 100,
            max_states: 6,
            max_actions: 3,
            delta_max: 3,
            gamma: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub delay: DelaySection,
    pub nets: NetsSection,
    pub disc: DiscSection,
    pub policy: PolicySection,
    pub expert: ExpertSection,
    pub bc: BcSection,
    pub certify: CertifySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.delay.delta_aux > self.delay.delta {
            return Err(ConfigError::Invalid(format!(
                "delta_aux {} exceeds delta {}",
                self.delay.delta_aux, self.delay.delta
            )));
        }
        if let Some(g) = self.env.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "gamma {g} must lie strictly inside (0,1)"
                )));
            }
        }
        if self.policy.batch == 0 || self.bc.batch == 0 {
            return Err(ConfigError::Invalid("batch sizes must be positive".into()));
        }
        if self.policy.buffer_capacity == 0 {
            return Err(ConfigError::Invalid("buffer capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.policy.polyak) {
            return Err(ConfigError::Invalid(format!(
                "polyak {} must lie in [0,1]",
                self.policy.polyak
            )));
        }
        if let Some(n) = self.delay.nstep {
            if n == 0 {
                return Err(ConfigError::Invalid("nstep must be >= 1".into()));
            }
        }
        match self.expert.rollout.as_str() {
            "stochastic" | "deterministic" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "expert.rollout must be \"stochastic\" or \"deterministic\", got {other:?}"
                )))
            }
        }
        self.build_env().map(|_| ())
    }

    /// Effective auxiliary delay (never above the full delay).
    pub fn delta_aux(&self) -> usize {
        self.delay.delta_aux.min(self.delay.delta)
    }

    /// Effective n-step span: max(1, delta - delta_aux) unless pinned.
    pub fn nstep(&self) -> usize {
        self.delay
            .nstep
            .unwrap_or_else(|| 1.max(self.delay.delta - self.delta_aux()))
    }

    /// Environment seed override from IDRL_SEED, when set.
    pub fn apply_seed_env_var(&mut self) {
        if let Ok(v) = std::env::var("IDRL_SEED") {
            if let Ok(seed) = v.trim().parse::<u64>() {
                self.run.seed = seed;
            }
        }
    }

    pub fn build_env(&self) -> Result<Box<dyn Env>, ConfigError> {
        let e = &self.env;
        let env: Box<dyn Env> = match e.id.as_str() {
            "chain" => {
                if e.chain_states < 2 {
                    return Err(ConfigError::Invalid("chain needs at least 2 states".into()));
                }
                Box::new(TabularEnv::new(
                    "chain",
                    chain_mdp(e.chain_states, e.chain_slip),
                    e.horizon.unwrap_or(40),
                    e.gamma.unwrap_or(0.95),
                ))
            }
            "grid5" => Box::new(TabularEnv::new(
                "grid5",
                grid5_mdp(e.grid_slip),
                e.horizon.unwrap_or(50),
                e.gamma.unwrap_or(0.95),
            )),
            "pendulum" => Box::new(PendulumEnv::new(
                e.horizon.unwrap_or(200),
                e.gamma.unwrap_or(0.99),
                e.noise_std,
            )),
            "pointmass" => Box::new(PointMassEnv::new(
                e.horizon.unwrap_or(100),
                e.gamma.unwrap_or(0.99),
                e.noise_std,
            )),
            other => return Err(ConfigError::UnknownEnv(other.to_string())),
        };
        env.spec()
            .validate()
            .map_err(|err| ConfigError::Invalid(err.to_string()))?;
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_str(&text).unwrap();
        assert_eq!(back.run.seed, cfg.run.seed);
        assert_eq!(back.nets.actor_hidden, cfg.nets.actor_hidden);
        assert_eq!(back.policy.batch, cfg.policy.batch);
    }

    #[test]
    fn nstep_defaults_to_the_delay_gap() {
        let mut cfg = RunConfig::default();
        cfg.delay.delta = 5;
        cfg.delay.delta_aux = 2;
        assert_eq!(cfg.nstep(), 3);
        cfg.delay.delta = 1;
        cfg.delay.delta_aux = 1;
        assert_eq!(cfg.nstep(), 1);
        cfg.delay.nstep = Some(4);
        assert_eq!(cfg.nstep(), 4);
    }

    #[test]
    fn unknown_env_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.env.id = "mujoco".into();
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::UnknownEnv(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_str("[run]\nbogus_field = 3\n");
        assert!(matches!(err, Err(ConfigError::Parse(_))));
    }

    #[test]
    fn invalid_delay_combination_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.delay.delta = 1;
        cfg.delay.delta_aux = 3;
        assert!(cfg.validate().is_err());
    }
}
