//! The shared online training loop: one delayed environment step per
//! iteration, then a discriminator update (adversarial mode), a reward
//! fill from the frozen discriminator, and one policy-optimizer iteration.
//! True-reward mode drops the discriminator and reads rewards from the
//! simulator trace instead (expert training).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{records_from_trace, ReplayBuffer, TransitionRecord};
use crate::delay::DelayedEnv;
use crate::disc::Discriminator;
use crate::env::Env;
use crate::nn::tape::Arr;
use crate::nn::{AdamState, Checkpoint};
use crate::policy_opt::{AuxDelayAgent, Batch};

use super::eval::{evaluate_with, EvalStats};
use super::metrics::MetricsRow;
use super::rundir::RunDir;
use super::TrainError;

/// Where rewards come from during training.
pub enum RewardSource<'a> {
    /// True environment rewards from the simulator trace (expert training).
    TrueReward,
    /// Frozen-discriminator rewards over expert and generator batches.
    Adversarial {
        expert_records: &'a [TransitionRecord],
    },
}

pub struct TrainOutcome {
    pub agent: AuxDelayAgent,
    pub disc: Option<Discriminator>,
    pub metrics: Vec<MetricsRow>,
    pub final_step: usize,
    pub final_eval: Option<EvalStats>,
}

/// Named deterministic random streams derived from the master seed.
struct SeedStreams {
    env: ChaCha8Rng,
    policy: ChaCha8Rng,
    disc: ChaCha8Rng,
}

fn mix(seed: u64, tag: u64) -> u64 {
    // splitmix64 over the tagged seed
    let mut z = seed ^ tag.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl SeedStreams {
    fn new(master: u64) -> Self {
        SeedStreams {
            env: ChaCha8Rng::seed_from_u64(mix(master, 1)),
            policy: ChaCha8Rng::seed_from_u64(mix(master, 2)),
            disc: ChaCha8Rng::seed_from_u64(mix(master, 3)),
        }
    }
}

fn rng_state_scalars(rng: &ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = rng.get_seed().iter().map(|&b| b as f64).collect();
    let wp = rng.get_word_pos();
    for limb in 0..4 {
        out.push(((wp >> (32 * limb)) & 0xFFFF_FFFF) as f64);
    }
    out
}

fn rng_from_scalars(values: &[f64]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = values[i] as u8;
    }
    let mut wp: u128 = 0;
    for limb in 0..4 {
        wp |= (values[32 + limb] as u128) << (32 * limb);
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(wp);
    rng
}

struct LastLosses {
    disc: f64,
    critic: f64,
    actor: f64,
    reward_mean: f64,
}

pub struct OnlineTrainer<'a> {
    cfg: &'a RunConfig,
    env: &'a dyn Env,
    source: RewardSource<'a>,
    pub agent: AuxDelayAgent,
    pub disc: Option<Discriminator>,
    opt_disc: Option<AdamState>,
    buffer: ReplayBuffer,
    streams: SeedStreams,
    start_step: usize,
    metrics: Vec<MetricsRow>,
}

impl<'a> OnlineTrainer<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        env: &'a dyn Env,
        source: RewardSource<'a>,
    ) -> Result<Self, TrainError> {
        let spec = env.spec();
        let delta = cfg.delay.delta;
        let delta_aux = cfg.delta_aux();
        let x_dim = spec.state_dim + delta * spec.action_dim;
        let x_aux_dim = spec.state_dim + delta_aux * spec.action_dim;
        let mut init_rng = ChaCha8Rng::seed_from_u64(mix(cfg.run.seed, 0));
        let agent = AuxDelayAgent::new(
            x_dim,
            x_aux_dim,
            spec.action_kind.clone(),
            &cfg.nets.actor_hidden,
            &cfg.nets.critic_hidden,
            cfg.policy.alpha,
            cfg.policy.polyak,
            cfg.nstep(),
            spec.gamma,
            &mut init_rng,
        );
        let (disc, opt_disc) = match &source {
            RewardSource::Adversarial { .. } => {
                let d = Discriminator::new(
                    x_dim + spec.action_dim,
                    &cfg.nets.reward_hidden,
                    cfg.disc.delta_margin,
                    cfg.disc.lambda_gp,
                    cfg.disc.lambda_ent,
                    &mut init_rng,
                );
                let shapes: Vec<(usize, usize)> =
                    d.reward_net.param_arrays().iter().map(|a| a.dim()).collect();
                (Some(d), Some(AdamState::new(&shapes)))
            }
            RewardSource::TrueReward => (None, None),
        };
        Ok(OnlineTrainer {
            cfg,
            env,
            source,
            agent,
            disc,
            opt_disc,
            buffer: ReplayBuffer::new(cfg.policy.buffer_capacity),
            streams: SeedStreams::new(cfg.run.seed),
            start_step: 0,
            metrics: Vec::new(),
        })
    }

    fn x_dim(&self) -> usize {
        self.env.spec().state_dim + self.cfg.delay.delta * self.env.spec().action_dim
    }

    fn flush_episode(&mut self, denv: &DelayedEnv<'_>) {
        let trace = match self.source {
            RewardSource::TrueReward => denv.trace().clone(),
            // learned-reward training never sees the true rewards
            RewardSource::Adversarial { .. } => denv.trace().redacted(),
        };
        if trace.is_empty() {
            return;
        }
        let recs = records_from_trace(
            &trace,
            self.env,
            self.cfg.delay.delta,
            self.cfg.delta_aux(),
            self.cfg.nstep(),
            trace.states.len(),
        );
        for r in recs {
            self.buffer.push(r);
        }
    }

    fn disc_batch_inputs(
        &self,
        records: &[&TransitionRecord],
    ) -> (Arr, Vec<f64>) {
        let m = records.len();
        let x_dim = self.x_dim();
        let a_dim = self.env.spec().action_dim;
        let mut inputs = Array2::zeros((m, x_dim + a_dim));
        let mut states = Array2::zeros((m, x_dim));
        for (i, r) in records.iter().enumerate() {
            for (j, &v) in r.flat_x().iter().enumerate() {
                inputs[(i, j)] = v;
                states[(i, j)] = v;
            }
            for (j, &v) in r.flat_action().iter().enumerate() {
                inputs[(i, x_dim + j)] = v;
            }
        }
        let actions: Vec<crate::env::Action> =
            records.iter().map(|r| r.action.clone()).collect();
        let log_pi = self.agent.actor_full.log_prob_batch(&states, &actions);
        (inputs, log_pi)
    }

    fn update_disc(&mut self) -> Result<f64, TrainError> {
        let RewardSource::Adversarial { expert_records } = &self.source else {
            return Ok(f64::NAN);
        };
        let batch = self.cfg.policy.batch;
        let e_refs: Vec<&TransitionRecord> = (0..batch)
            .map(|_| &expert_records[self.streams.disc.gen_range(0..expert_records.len())])
            .collect();
        let g_idx = self.buffer.sample_indices(batch, &mut self.streams.disc);
        let g_refs: Vec<&TransitionRecord> = g_idx.iter().map(|&i| self.buffer.get(i)).collect();
        let (xe, lpe) = self.disc_batch_inputs(&e_refs);
        let (xg, lpg) = self.disc_batch_inputs(&g_refs);
        let disc = self.disc.as_mut().expect("adversarial mode has a discriminator");
        let (parts, grads) =
            disc.loss_and_grads(&xe, &lpe, &xg, &lpg, &mut self.streams.disc);
        self.opt_disc.as_mut().unwrap().apply(
            &mut disc.reward_net.param_arrays_mut(),
            &grads,
            self.cfg.disc.lr,
        );
        Ok(parts.total)
    }

    /// Fill reward sequences of an owned batch from the frozen
    /// discriminator snapshot (mutating theta afterwards cannot change the
    /// filled values). Returns the mean filled reward.
    fn fill_batch_rewards(&self, records: &mut [TransitionRecord]) -> f64 {
        let RewardSource::Adversarial { .. } = &self.source else {
            // true-reward mode: r_seq was seeded at record creation
            let mut total = 0.0;
            let mut count = 0usize;
            for r in records.iter() {
                for i in 0..r.n_valid {
                    total += r.r_seq[i];
                    count += 1;
                }
            }
            return if count == 0 { 0.0 } else { total / count as f64 };
        };
        let disc = self.disc.as_ref().unwrap();
        let x_dim = self.x_dim();
        let a_dim = self.env.spec().action_dim;
        // flatten every (record, slot) pair into one batch
        let mut owners: Vec<(usize, usize)> = Vec::new();
        for (ri, r) in records.iter().enumerate() {
            for i in 0..r.n_valid {
                owners.push((ri, i));
            }
        }
        let mut inputs = Array2::zeros((owners.len(), x_dim + a_dim));
        let mut states = Array2::zeros((owners.len(), x_dim));
        let mut actions = Vec::with_capacity(owners.len());
        for (row, &(ri, i)) in owners.iter().enumerate() {
            let r = &records[ri];
            let flat = &r.pairs_flat_slot(i);
            for (j, &v) in flat.iter().enumerate() {
                inputs[(row, j)] = v;
                if j < x_dim {
                    states[(row, j)] = v;
                }
            }
            actions.push(r.pairs[i].1.clone());
        }
        let log_pi = self.agent.actor_full.log_prob_batch(&states, &actions);
        let rewards = disc.reward_batch(&inputs, &log_pi);
        let mut total = 0.0;
        for (row, &(ri, i)) in owners.iter().enumerate() {
            records[ri].r_seq[i] = rewards[row];
            total += rewards[row];
        }
        for r in records.iter_mut() {
            for i in r.n_valid..r.r_seq.len() {
                r.r_seq[i] = 0.0;
            }
        }
        if owners.is_empty() {
            0.0
        } else {
            total / owners.len() as f64
        }
    }

    /// Run (or resume) the loop. `early_stop` is polled at every evaluation
    /// with the step and fresh stats; returning true ends training.
    pub fn run(
        mut self,
        run_dir: Option<&RunDir>,
        resume: bool,
        mut early_stop: Option<&mut dyn FnMut(usize, &EvalStats) -> bool>,
    ) -> Result<TrainOutcome, TrainError> {
        if let Some(rd) = run_dir {
            if resume {
                if let Some((step, path)) = rd.latest_checkpoint() {
                    let ckpt = Checkpoint::load(&path)?;
                    self.restore(&ckpt)?;
                    self.start_step = step;
                    self.metrics = rd.truncate_metrics_after(step)?;
                } else {
                    rd.write_resolved_config(self.cfg)?;
                    rd.start_metrics()?;
                }
            } else {
                rd.write_resolved_config(self.cfg)?;
                rd.start_metrics()?;
            }
        }

        let delta = self.cfg.delay.delta;
        let mut denv = DelayedEnv::new(self.env, delta, self.streams.env.gen());
        let mut last = LastLosses {
            disc: f64::NAN,
            critic: f64::NAN,
            actor: f64::NAN,
            reward_mean: f64::NAN,
        };
        let mut last_ckpt = self.start_step;
        let mut final_eval: Option<EvalStats> = self.metrics.last().map(|r| EvalStats {
            mean: r.eval_return_mean,
            std: r.eval_return_std,
            disc_mean: f64::NAN,
        });

        // warm-up: seed the buffer with random-action transitions
        if self.start_step == 0 {
            for _ in 0..self.cfg.run.warmup_steps {
                if denv.is_done() {
                    self.flush_episode(&denv);
                    denv.reset(self.streams.env.gen());
                }
                let a = self.env.random_action(&mut self.streams.policy);
                let seed = self.streams.env.gen();
                denv.step(&a, seed)?;
                if denv.is_done() {
                    self.flush_episode(&denv);
                    denv.reset(self.streams.env.gen());
                }
            }
        }

        let total = self.cfg.run.total_steps;
        let mut step = self.start_step;
        while step < total {
            step += 1;
            if denv.is_done() {
                denv.reset(self.streams.env.gen());
            }
            let x_flat = denv.current().flatten(self.env);
            let a = self.agent.act(&x_flat, &mut self.streams.policy, false);
            let seed = self.streams.env.gen();
            denv.step(&a, seed)?;
            if denv.is_done() {
                self.flush_episode(&denv);
            }

            if !self.buffer.is_empty() {
                // discriminator update on expert vs generator batches
                last.disc = self.update_disc()?;
                if !last.disc.is_nan() && !last.disc.is_finite() {
                    self.diagnostic(run_dir, step)?;
                    return Err(TrainError::NonFinite {
                        what: "discriminator loss".into(),
                        step,
                    });
                }
                // fresh generator batch with frozen-theta rewards
                let mut recs = self
                    .buffer
                    .sample_cloned(self.cfg.policy.batch, &mut self.streams.policy);
                last.reward_mean = self.fill_batch_rewards(&mut recs);
                let batch = Batch::from_records(recs.iter());
                let stats =
                    self.agent
                        .train_iteration(&batch, self.cfg.policy.lr, &mut self.streams.policy);
                last.critic = stats.critic_loss;
                last.actor = stats.actor_loss;
                if !stats.critic_loss.is_finite() || !stats.actor_loss.is_finite() {
                    self.diagnostic(run_dir, step)?;
                    return Err(TrainError::NonFinite {
                        what: "policy optimizer loss".into(),
                        step,
                    });
                }
            }

            if step % self.cfg.run.eval_interval == 0 {
                let stats = self.evaluate(step);
                final_eval = Some(stats);
                let row = MetricsRow {
                    step,
                    eval_return_mean: stats.mean,
                    eval_return_std: stats.std,
                    disc_loss: last.disc,
                    critic_loss: last.critic,
                    actor_loss: last.actor,
                    reward_mean: last.reward_mean,
                };
                self.metrics.push(row);
                if let Some(rd) = run_dir {
                    rd.append_metrics(&row)?;
                    if step - last_ckpt >= self.cfg.run.checkpoint_interval {
                        self.checkpoint(step)?.save(&rd.checkpoint_path(step))?;
                        last_ckpt = step;
                    }
                }
                if let Some(stop) = early_stop.as_deref_mut() {
                    if stop(step, &stats) {
                        break;
                    }
                }
            }
        }

        if let Some(rd) = run_dir {
            if step > last_ckpt || step == 0 {
                self.checkpoint(step)?.save(&rd.checkpoint_path(step))?;
            }
        }
        Ok(TrainOutcome {
            agent: self.agent,
            disc: self.disc,
            metrics: self.metrics,
            final_step: step,
            final_eval,
        })
    }

    fn evaluate(&self, step: usize) -> EvalStats {
        let eval_seed = mix(self.cfg.run.seed, 0xE7A1_0000 ^ step as u64);
        let agent = &self.agent;
        let env = self.env;
        evaluate_with(
            env,
            self.cfg.delay.delta,
            self.cfg.run.eval_episodes,
            eval_seed,
            |x| {
                let flat = x.flatten(env);
                agent.actor_full.mean_action(&flat)
            },
        )
    }

    fn diagnostic(&self, run_dir: Option<&RunDir>, step: usize) -> Result<(), TrainError> {
        if let Some(rd) = run_dir {
            self.checkpoint(step)?
                .save(&rd.diagnostic_checkpoint_path(step))?;
        }
        Ok(())
    }

    fn checkpoint(&self, step: usize) -> Result<Checkpoint, TrainError> {
        let mut ckpt = Checkpoint::new();
        let clone_params = |m: &crate::nn::Mlp| m.param_arrays().iter().map(|a| (*a).clone()).collect();
        ckpt.push("actor_full", clone_params(self.agent.actor_full.net()));
        ckpt.push("actor_aux", clone_params(self.agent.actor_aux.net()));
        ckpt.push("critic1", clone_params(&self.agent.critic1));
        ckpt.push("critic2", clone_params(&self.agent.critic2));
        ckpt.push("target1", clone_params(&self.agent.target1));
        ckpt.push("target2", clone_params(&self.agent.target2));
        let push_opt = |ckpt: &mut Checkpoint, name: &str, opt: &AdamState| {
            ckpt.push(format!("opt_{name}_m"), opt.m.clone());
            ckpt.push(format!("opt_{name}_v"), opt.v.clone());
            ckpt.push_scalars(format!("opt_{name}_meta"), &[opt.step as f64]);
        };
        push_opt(&mut ckpt, "actor_full", &self.agent.opt_actor_full);
        push_opt(&mut ckpt, "actor_aux", &self.agent.opt_actor_aux);
        push_opt(&mut ckpt, "critic1", &self.agent.opt_critic1);
        push_opt(&mut ckpt, "critic2", &self.agent.opt_critic2);
        if let (Some(disc), Some(opt)) = (&self.disc, &self.opt_disc) {
            ckpt.push("disc", clone_params(&disc.reward_net));
            push_opt(&mut ckpt, "disc", opt);
        }
        ckpt.push_scalars("meta", &[1.0, step as f64]);
        ckpt.push_scalars("rng_env", &rng_state_scalars(&self.streams.env));
        ckpt.push_scalars("rng_policy", &rng_state_scalars(&self.streams.policy));
        ckpt.push_scalars("rng_disc", &rng_state_scalars(&self.streams.disc));
        // replay buffer: fixed-width rows plus ring bookkeeping
        let rows: Vec<Vec<f64>> = self.buffer.iter().map(|r| r.to_flat_row()).collect();
        let width = rows.first().map_or(0, |r| r.len());
        let mut mat = Array2::zeros((rows.len(), width));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                mat[(i, j)] = v;
            }
        }
        ckpt.push("buffer_rows", vec![mat]);
        ckpt.push_scalars(
            "buffer_meta",
            &[
                self.buffer.len() as f64,
                self.buffer.next_slot() as f64,
                self.buffer.pushed() as f64,
            ],
        );
        Ok(ckpt)
    }

    fn restore(&mut self, ckpt: &Checkpoint) -> Result<(), TrainError> {
        self.agent
            .actor_full
            .net_mut()
            .load_params(ckpt.get("actor_full")?);
        self.agent
            .actor_aux
            .net_mut()
            .load_params(ckpt.get("actor_aux")?);
        self.agent.critic1.load_params(ckpt.get("critic1")?);
        self.agent.critic2.load_params(ckpt.get("critic2")?);
        self.agent.target1.load_params(ckpt.get("target1")?);
        self.agent.target2.load_params(ckpt.get("target2")?);
        let load_opt = |ckpt: &Checkpoint, name: &str, opt: &mut AdamState| -> Result<(), TrainError> {
            opt.m = ckpt.get(&format!("opt_{name}_m"))?.to_vec();
            opt.v = ckpt.get(&format!("opt_{name}_v"))?.to_vec();
            opt.step = ckpt.get_scalars(&format!("opt_{name}_meta"))?[0] as u64;
            Ok(())
        };
        load_opt(ckpt, "actor_full", &mut self.agent.opt_actor_full)?;
        load_opt(ckpt, "actor_aux", &mut self.agent.opt_actor_aux)?;
        load_opt(ckpt, "critic1", &mut self.agent.opt_critic1)?;
        load_opt(ckpt, "critic2", &mut self.agent.opt_critic2)?;
        if let (Some(disc), Some(opt)) = (self.disc.as_mut(), self.opt_disc.as_mut()) {
            disc.reward_net.load_params(ckpt.get("disc")?);
            load_opt(ckpt, "disc", opt)?;
        }
        self.streams.env = rng_from_scalars(&ckpt.get_scalars("rng_env")?);
        self.streams.policy = rng_from_scalars(&ckpt.get_scalars("rng_policy")?);
        self.streams.disc = rng_from_scalars(&ckpt.get_scalars("rng_disc")?);
        let meta = ckpt.get_scalars("buffer_meta")?;
        let rows = &ckpt.get("buffer_rows")?[0];
        let mut buffer = ReplayBuffer::new(self.cfg.policy.buffer_capacity);
        for i in 0..meta[0] as usize {
            let row: Vec<f64> = rows.row(i).to_vec();
            let rec = TransitionRecord::from_flat_row(
                self.env,
                self.cfg.delay.delta,
                self.cfg.delta_aux(),
                self.cfg.nstep(),
                &row,
            )
            .map_err(|e| TrainError::Data(crate::data::DataError::Invalid(e.to_string())))?;
            buffer.push(rec);
        }
        buffer.set_ring_state(meta[1] as usize, meta[2] as u64);
        self.buffer = buffer;
        Ok(())
    }
}
