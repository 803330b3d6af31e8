//! PPO with a clipped surrogate, GAE and a KL-adaptive learning rate.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{EpisodeObserver, NetPolicy};
use super::nn::{batch_from_rows, clip_grad_norm, Adam, NnError, PolicyNet};
use super::obs::{ObsNormalizer, ObservationSpec};
use crate::curriculum::{CurriculumError, SamplerConfig, SamplerState};
use crate::motion_bank::MotionClip;
use crate::reward::RewardSpec;
use crate::sim::evaluate::episode_seed;
use crate::sim::{evaluate_clips, EnvConfig, EnvError, Metrics, RobotModel, ToyEnv};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub desired_kl: f64,
    pub lr_bounds: [f64; 2],
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub init_std: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout_len: 24,
            epochs: 5,
            minibatches: 4,
            learning_rate: 1e-3,
            desired_kl: 0.01,
            lr_bounds: [1e-6, 1e-2],
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            value_coef: 1.0,
            entropy_coef: 0.005,
            max_grad_norm: 1.0,
            init_std: 1.0,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.rollout_len == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("rollout_len, epochs and minibatches must be positive");
        }
        if !(self.lr_bounds[0] > 0.0 && self.lr_bounds[0] <= self.lr_bounds[1]) {
            return bad("lr_bounds must be positive and ordered");
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        Ok(())
    }
}

/// GAE over one trajectory. `values` has one extra trailing entry used to
/// bootstrap the last step; `dones[t]` cuts the recursion after step `t`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values need a bootstrap entry");
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
}

/// `KL(old || new)` between diagonal Gaussians.
pub fn gaussian_kl(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    (0..mean_old.len())
        .map(|j| {
            let (so, sn) = (log_std_old[j].exp(), log_std_new[j].exp());
            log_std_new[j] - log_std_old[j] + (so * so + (mean_old[j] - mean_new[j]).powi(2)) / (2.0 * sn * sn) - 0.5
        })
        .sum()
}

/// The learning-rate rule driven by the measured KL.
pub fn adapt_learning_rate(lr: f64, kl: f64, cfg: &PpoConfig) -> f64 {
    let lr = if kl > 2.0 * cfg.desired_kl {
        lr / 2.0
    } else if kl < cfg.desired_kl / 2.0 {
        lr * 2.0
    } else {
        lr
    };
    lr.clamp(cfg.lr_bounds[0], cfg.lr_bounds[1])
}

/// Transitions gathered with a fixed policy snapshot. Observations are
/// stored already normalized.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub actor_obs: Vec<Vec<f64>>,
    pub critic_obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub kl: f64,
    pub clip_fraction: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub learning_rate: f64,
    /// Ratio statistics of the very first minibatch (before any update).
    pub first_ratio_max_dev: f64,
}

/// Actor and critic with their optimizers and the current learning rate.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: PolicyNet<f64>,
    pub critic: PolicyNet<f64>,
    pub actor_opt: Adam<f64>,
    pub critic_opt: Adam<f64>,
    pub learning_rate: f64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(actor_in: usize, critic_in: usize, act_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Result<Self, NnError> {
        let widths = |inp: usize, hidden: &[usize], out: usize| {
            let mut w = vec![inp];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let mut actor = PolicyNet::init(&widths(actor_in, &cfg.actor_hidden, act_dim), true, cfg.init_std, rng)?;
        let last = actor.layers() - 1;
        actor.init_xavier_layer(last, 0.01, rng);
        let mut critic = PolicyNet::init(&widths(critic_in, &cfg.critic_hidden, 1), false, 1.0, rng)?;
        let last = critic.layers() - 1;
        critic.init_xavier_layer(last, 1.0, rng);
        Ok(Self {
            actor_opt: Adam::new(actor.num_params(), cfg.learning_rate),
            critic_opt: Adam::new(critic.num_params(), cfg.learning_rate),
            actor,
            critic,
            learning_rate: cfg.learning_rate,
        })
    }
}

/// Runs `epochs x minibatches` clipped-surrogate updates on `rollout`.
pub fn ppo_update<R: Rng + ?Sized>(ac: &mut ActorCritic, rollout: &Rollout, cfg: &PpoConfig, rng: &mut R) -> PpoStats {
    let n = rollout.len();
    let act_dim = ac.actor.output_dim();
    let mb = (n / cfg.minibatches).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut updates = 0usize;
    let mut first = true;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let m = chunk.len() as f64;
            let rows = |src: &Vec<Vec<f64>>| batch_from_rows(&chunk.iter().map(|&i| src[i].clone()).collect::<Vec<_>>());
            let obs_a = rows(&rollout.actor_obs);
            let obs_c = rows(&rollout.critic_obs);
            let cache_a = ac.actor.forward_batch(&obs_a).expect("actor width");
            let cache_c = ac.critic.forward_batch(&obs_c).expect("critic width");
            let mean = cache_a.output();
            let log_std = ac.actor.log_std().to_vec();

            // Advantage normalization within the minibatch.
            let advs: Vec<f64> = chunk.iter().map(|&i| rollout.advantages[i]).collect();
            let a_mean = advs.iter().sum::<f64>() / m;
            let a_std = (advs.iter().map(|a| (a - a_mean).powi(2)).sum::<f64>() / m).sqrt() + 1e-8;

            let mut kl = 0.0;
            for (c, &i) in chunk.iter().enumerate() {
                let mu: Vec<f64> = mean.column(c).iter().copied().collect();
                kl += gaussian_kl(&rollout.means[i], &rollout.log_std, &mu, &log_std) / m;
            }
            ac.learning_rate = adapt_learning_rate(ac.learning_rate, kl, cfg);

            let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
            let mut d_mean = DMatrix::<f64>::zeros(act_dim, chunk.len());
            let mut d_log_std = vec![-cfg.entropy_coef; act_dim];
            let mut surr_sum = 0.0;
            let mut clipped = 0usize;
            let mut max_dev: f64 = 0.0;
            for (c, &i) in chunk.iter().enumerate() {
                let mu: Vec<f64> = mean.column(c).iter().copied().collect();
                let logp = gaussian_log_prob(&rollout.actions[i], &mu, &log_std);
                let ratio = (logp - rollout.log_probs[i]).exp();
                max_dev = max_dev.max((ratio - 1.0).abs());
                let adv = (advs[c] - a_mean) / a_std;
                surr_sum += surrogate(ratio, adv, cfg.clip);
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1;
                }
                let unclipped_active = ratio * adv <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
                if unclipped_active {
                    let g = -adv * ratio / m;
                    for j in 0..act_dim {
                        let diff = rollout.actions[i][j] - mu[j];
                        d_mean[(j, c)] = g * diff * inv_var[j];
                        d_log_std[j] += g * (diff * diff * inv_var[j] - 1.0);
                    }
                }
            }
            if first {
                stats.first_ratio_max_dev = max_dev;
                first = false;
            }
            let values = cache_c.output();
            let mut d_value = DMatrix::<f64>::zeros(1, chunk.len());
            let mut v_loss = 0.0;
            for (c, &i) in chunk.iter().enumerate() {
                let e = values[(0, c)] - rollout.returns[i];
                v_loss += e * e / m;
                d_value[(0, c)] = 2.0 * cfg.value_coef * e / m;
            }

            let mut ga = ac.actor.backward(&cache_a, &d_mean).expect("actor grads");
            let off = ac.actor.log_std_offset();
            ga[off..].copy_from_slice(&d_log_std);
            let mut gc = ac.critic.backward(&cache_c, &d_value).expect("critic grads");
            clip_grad_norm(&mut [&mut ga[..], &mut gc[..]], cfg.max_grad_norm);
            ac.actor_opt.lr = ac.learning_rate;
            ac.critic_opt.lr = ac.learning_rate;
            ac.actor_opt.step(ac.actor.params_mut(), &ga);
            ac.critic_opt.step(ac.critic.params_mut(), &gc);

            stats.kl += kl;
            stats.clip_fraction += clipped as f64 / m;
            stats.surrogate += surr_sum / m;
            stats.value_loss += v_loss;
            stats.entropy += gaussian_entropy(&log_std);
            updates += 1;
        }
    }
    let u = updates.max(1) as f64;
    stats.kl /= u;
    stats.clip_fraction /= u;
    stats.surrogate /= u;
    stats.value_loss /= u;
    stats.entropy /= u;
    stats.learning_rate = ac.learning_rate;
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub num_envs: usize,
    pub max_env_steps: u64,
    /// Evaluate the deterministic policy every this many iterations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once success rate reaches this and ...
    pub target_success: f64,
    /// ... E_AP falls below this fraction of the untrained policy's.
    pub target_ap_ratio: f64,
    pub early_stop: bool,
    pub obs_noise: bool,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub obs: ObservationSpec,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_envs: 32,
            max_env_steps: 2_000_000,
            eval_every: 10,
            eval_episodes: 8,
            target_success: 0.9,
            target_ap_ratio: 0.5,
            early_stop: true,
            obs_noise: true,
            ppo: PpoConfig::default(),
            env: EnvConfig::default(),
            obs: ObservationSpec::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_step_reward: f64,
    pub episodes_finished: usize,
    pub stats: PpoStats,
    pub eval: Option<Metrics>,
}

impl CurvePoint {
    pub const CSV_HEADER: &'static str =
        "iteration,env_steps,mean_step_reward,episodes_finished,kl,clip_fraction,value_loss,entropy,learning_rate,E_AP,success_rate";

    pub fn csv_row(&self) -> String {
        let (ap, sr) = self.eval.map_or((String::new(), String::new()), |m| (m.E_AP.to_string(), m.success_rate.to_string()));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_step_reward,
            self.episodes_finished,
            self.stats.kl,
            self.stats.clip_fraction,
            self.stats.value_loss,
            self.stats.entropy,
            self.stats.learning_rate,
            ap,
            sr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: NetPolicy,
    pub critic: PolicyNet<f64>,
    pub critic_normalizer: ObsNormalizer,
    pub untrained: Metrics,
    pub final_metrics: Metrics,
    pub env_steps: u64,
    pub reached_target: bool,
    pub curve: Vec<CurvePoint>,
}

struct Slot {
    env: ToyEnv,
    rng: ChaCha8Rng,
    observer: Option<EpisodeObserver>,
    motion: usize,
    start: usize,
    actor_obs: Vec<f64>,
    critic_obs: Vec<f64>,
}

struct StepOut {
    reward: f64,
    done: bool,
    /// Critic observation of a truncated (non-failure) terminal state.
    bootstrap: Option<Vec<f64>>,
    finished: Option<bool>,
}

/// PPO training loop over a set of clips with curriculum sampling.
pub struct Trainer {
    cfg: TrainConfig,
    clips: Vec<Arc<MotionClip>>,
    model: RobotModel<f64>,
    sampler: SamplerState,
    rng: ChaCha8Rng,
    slots: Vec<Slot>,
    pub ac: ActorCritic,
    pub actor_norm: ObsNormalizer,
    pub critic_norm: ObsNormalizer,
    env_steps: u64,
}

impl Trainer {
    pub fn new(clips: Vec<Arc<MotionClip>>, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.ppo.validate()?;
        cfg.env.validate()?;
        if clips.is_empty() || cfg.num_envs == 0 {
            return Err(TrainError::InvalidConfig("need at least one clip and one env".into()));
        }
        let model = RobotModel::toy_biped();
        let lengths: Vec<usize> = clips.iter().map(|c| c.frames()).collect();
        let sampler = SamplerState::new(cfg.sampler.clone(), &lengths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (dof, bodies) = (model.dof(), model.body_count());
        let (a_in, c_in) = (cfg.obs.actor_dim(dof), cfg.obs.critic_dim(dof, bodies));
        let ac = ActorCritic::new(a_in, c_in, dof, &cfg.ppo, &mut rng)?;
        let slots = (0..cfg.num_envs)
            .map(|i| -> Result<Slot, TrainError> {
                Ok(Slot {
                    env: ToyEnv::new(model.clone(), cfg.env.clone(), RewardSpec::default())?,
                    rng: ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, i)),
                    observer: None,
                    motion: 0,
                    start: 0,
                    actor_obs: Vec::new(),
                    critic_obs: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut t = Self {
            actor_norm: ObsNormalizer::new(a_in),
            critic_norm: ObsNormalizer::new(c_in),
            cfg,
            clips,
            model,
            sampler,
            rng,
            slots,
            ac,
            env_steps: 0,
        };
        for i in 0..t.slots.len() {
            t.begin_episode(i)?;
        }
        Ok(t)
    }

    fn begin_episode(&mut self, i: usize) -> Result<(), TrainError> {
        let motion = self.sampler.sample_motion(&mut self.rng);
        let start = self.sampler.sample_start_time(motion, &mut self.rng)?;
        let clip = self.clips[motion].clone();
        let noise = self.cfg.obs_noise;
        let slot = &mut self.slots[i];
        slot.env.randomize(&mut slot.rng);
        let first = slot.env.reset(clip.clone(), start)?;
        let noise_seed = noise.then(|| slot.rng.random());
        let mut observer = EpisodeObserver::new(&self.cfg.obs, &self.model, clip, &first, noise_seed);
        let (a, c) = observer.observe(&first);
        slot.actor_obs = a;
        slot.critic_obs = c;
        slot.observer = Some(observer);
        slot.motion = motion;
        slot.start = start;
        Ok(())
    }

    pub fn policy(&self) -> NetPolicy {
        NetPolicy::new(self.ac.actor.clone(), self.actor_norm.clone(), self.cfg.obs.clone())
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    fn values(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let normed: Vec<Vec<f64>> = rows.iter().map(|r| self.critic_norm.normalize(r)).collect();
        let cache = self.ac.critic.forward_batch(&batch_from_rows(&normed)).expect("critic width");
        cache.output().iter().copied().collect()
    }

    /// Collects one rollout and returns it with the mean per-step reward
    /// and the number of finished episodes.
    pub fn collect(&mut self) -> Result<(Rollout, f64, usize), TrainError> {
        let n_env = self.slots.len();
        let horizon = self.cfg.ppo.rollout_len;
        let dt = self.cfg.env.dt;
        let log_std = self.ac.actor.log_std().to_vec();
        let stds: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();
        let mut per_env: Vec<Vec<usize>> = vec![Vec::with_capacity(horizon); n_env];
        let mut out = Rollout { log_std: log_std.clone(), ..Default::default() };
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        let mut raw_actor = Vec::new();
        let mut raw_critic = Vec::new();
        let mut finished = 0usize;
        for _ in 0..horizon {
            let a_rows: Vec<Vec<f64>> = self.slots.iter().map(|s| self.actor_norm.normalize(&s.actor_obs)).collect();
            let c_rows: Vec<Vec<f64>> = self.slots.iter().map(|s| self.critic_norm.normalize(&s.critic_obs)).collect();
            let means = self.ac.actor.forward_batch(&batch_from_rows(&a_rows))?.output().clone();
            let values = self.ac.critic.forward_batch(&batch_from_rows(&c_rows))?.output().clone();
            let mut actions = Vec::with_capacity(n_env);
            for (e, slot) in self.slots.iter_mut().enumerate() {
                let mu: Vec<f64> = means.column(e).iter().copied().collect();
                let act: Vec<f64> = mu.iter().zip(&stds).map(|(m, s)| m + s * slot.rng.sample::<f64, _>(StandardNormal)).collect();
                out.log_probs.push(gaussian_log_prob(&act, &mu, &log_std));
                out.means.push(mu);
                actions.push(act);
            }
            for (e, slot) in self.slots.iter().enumerate() {
                per_env[e].push(out.actions.len() + e);
                raw_actor.push(slot.actor_obs.clone());
                raw_critic.push(slot.critic_obs.clone());
                out.values.push(values[(0, e)]);
            }
            out.actor_obs.extend(a_rows);
            out.critic_obs.extend(c_rows);
            let results: Vec<Result<StepOut, EnvError>> = self
                .slots
                .par_iter_mut()
                .zip(actions.par_iter())
                .map(|(slot, act)| {
                    let r = slot.env.step(act)?;
                    let observer = slot.observer.as_mut().expect("episode started");
                    let reward = r.reward.total * dt;
                    match r.termination {
                        Some(t) => Ok(StepOut {
                            reward,
                            done: true,
                            bootstrap: t.is_success().then(|| observer.critic_only(&r.obs)),
                            finished: Some(!t.is_success()),
                        }),
                        None => {
                            let (a, c) = observer.observe(&r.obs);
                            slot.actor_obs = a;
                            slot.critic_obs = c;
                            Ok(StepOut { reward, done: false, bootstrap: None, finished: None })
                        }
                    }
                })
                .collect();
            out.actions.extend(actions);
            let results: Vec<StepOut> = results.into_iter().collect::<Result<_, _>>()?;
            let boot_rows: Vec<Vec<f64>> = results.iter().filter_map(|r| r.bootstrap.clone()).collect();
            let boot_vals = if boot_rows.is_empty() { Vec::new() } else { self.values(&boot_rows) };
            let mut bv = boot_vals.into_iter();
            for (e, r) in results.into_iter().enumerate() {
                let mut reward = r.reward;
                if r.bootstrap.is_some() {
                    reward += self.cfg.ppo.gamma * bv.next().expect("one value per bootstrap row");
                }
                rewards.push(reward);
                dones.push(r.done);
                if let Some(failed) = r.finished {
                    finished += 1;
                    let (m, s) = (self.slots[e].motion, self.slots[e].start);
                    self.sampler.record_episode(m, s, failed)?;
                    self.begin_episode(e)?;
                }
            }
            self.env_steps += n_env as u64;
            self.sampler.advance(n_env as u64);
        }
        let last: Vec<Vec<f64>> = self.slots.iter().map(|s| s.critic_obs.clone()).collect();
        let last_values = self.values(&last);
        out.advantages = vec![0.0; out.actions.len()];
        out.returns = vec![0.0; out.actions.len()];
        for (e, ids) in per_env.iter().enumerate() {
            let r: Vec<f64> = ids.iter().map(|&i| rewards[i]).collect();
            let d: Vec<bool> = ids.iter().map(|&i| dones[i]).collect();
            let mut v: Vec<f64> = ids.iter().map(|&i| out.values[i]).collect();
            v.push(last_values[e]);
            let (adv, ret) = gae_advantages(&r, &v, &d, self.cfg.ppo.gamma, self.cfg.ppo.lambda);
            for (k, &i) in ids.iter().enumerate() {
                out.advantages[i] = adv[k];
                out.returns[i] = ret[k];
            }
        }
        let raw_mean = rewards.iter().sum::<f64>() / rewards.len() as f64 / dt;
        self.actor_norm.update(&raw_actor);
        self.critic_norm.update(&raw_critic);
        Ok((out, raw_mean, finished))
    }

    pub fn evaluate(&self) -> Result<Metrics, TrainError> {
        let mut env = self.cfg.env.clone();
        env.randomization.enabled = false;
        env.randomization.pushes = false;
        Ok(evaluate_clips(&self.policy(), &self.clips, &env, self.cfg.eval_episodes, self.cfg.seed ^ 0xE7A1)?)
    }

    /// Trains until the target is met (when early stopping) or the step
    /// budget is spent.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        let untrained = self.evaluate()?;
        let mut curve = Vec::new();
        let mut iteration = 0;
        let mut last_eval = untrained;
        let mut reached = false;
        while self.env_steps < self.cfg.max_env_steps {
            let (rollout, mean_r, finished) = self.collect()?;
            let stats = ppo_update(&mut self.ac, &rollout, &self.cfg.ppo, &mut self.rng);
            iteration += 1;
            let eval = if iteration % self.cfg.eval_every.max(1) == 0 {
                let m = self.evaluate()?;
                last_eval = m;
                log::info!("iter {iteration} steps {} reward {mean_r:.3} E_AP {:.4} success {:.2}", self.env_steps, m.E_AP, m.success_rate);
                Some(m)
            } else {
                None
            };
            curve.push(CurvePoint { iteration, env_steps: self.env_steps, mean_step_reward: mean_r, episodes_finished: finished, stats, eval });
            if let Some(m) = eval {
                reached = m.success_rate >= self.cfg.target_success && m.E_AP < self.cfg.target_ap_ratio * untrained.E_AP;
                if reached && self.cfg.early_stop {
                    break;
                }
            }
        }
        if curve.last().is_none_or(|c| c.eval.is_none()) {
            last_eval = self.evaluate()?;
            reached = last_eval.success_rate >= self.cfg.target_success && last_eval.E_AP < self.cfg.target_ap_ratio * untrained.E_AP;
        }
        Ok(TrainOutcome {
            policy: self.policy(),
            critic: self.ac.critic.clone(),
            critic_normalizer: self.critic_norm.clone(),
            untrained,
            final_metrics: last_eval,
            env_steps: self.env_steps,
            reached_target: reached,
            curve,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_single_step() {
        let (a, r) = gae_advantages(&[1.0], &[0.0, 0.0], &[false], 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn gae_lambda_zero_is_td_residual() {
        let rw = [0.5, -1.0, 2.0, 0.25];
        let v = [0.1, 0.4, -0.3, 0.7, 1.1];
        let d = [false, true, false, false];
        let g = 0.9;
        let (a, _) = gae_advantages(&rw, &v, &d, g, 0.0);
        for t in 0..4 {
            let live = if d[t] { 0.0 } else { 1.0 };
            assert_eq!(a[t], rw[t] + g * v[t + 1] * live - v[t]);
        }
    }

    #[test]
    fn gae_monte_carlo_limit() {
        let rw = [1.0, 2.0, 3.0];
        let v = [0.5, 0.25, 0.125, 0.0];
        let (a, _) = gae_advantages(&rw, &v, &[false; 3], 1.0, 1.0);
        for t in 0..3 {
            let mc: f64 = rw[t..].iter().sum();
            assert!((a[t] - (mc - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_clip_algebra() {
        assert!((surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn kl_zero_for_identical() {
        assert_eq!(gaussian_kl(&[0.3, -1.0], &[0.1, -0.2], &[0.3, -1.0], &[0.1, -0.2]), 0.0);
    }

    #[test]
    fn lr_rule() {
        let c = PpoConfig::default();
        assert_eq!(adapt_learning_rate(1e-3, 0.05, &c), 5e-4);
        assert_eq!(adapt_learning_rate(1e-3, 0.001, &c), 2e-3);
        assert_eq!(adapt_learning_rate(1e-3, 0.01, &c), 1e-3);
        assert_eq!(adapt_learning_rate(1e-2, 0.0, &c), 1e-2);
        assert_eq!(adapt_learning_rate(1e-6, 1.0, &c), 1e-6);
    }

    #[test]
    fn config_validation() {
        let mut c = PpoConfig::default();
        assert!(c.validate().is_ok());
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c = PpoConfig { lambda: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
        c = PpoConfig { clip: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
