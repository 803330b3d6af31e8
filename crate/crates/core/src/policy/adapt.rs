//! Imitation training of a general tracker and the three ways of adapting
//! it to a teleoperation interface: fine-tuning, continual training on a
//! mixture, and a distilled residual.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{policy_reference, EpisodeObserver, ExpertPolicy, NetPolicy, ReferenceFeed, StreamShift};
use super::nn::{batch_from_rows, Adam, NnError, PolicyNet};
use super::obs::{ObsNormalizer, ObservationSpec};
use super::residual::{DistillConfig, DistillError, DistillSample, Distiller, RecordedTeacher, Regime, RolloutSource, Teacher, Teachers};
use crate::motion_bank::{MotionClip, SourceId};
use crate::reward::RewardSpec;
use crate::sim::evaluate::episode_seed;
use crate::sim::{EnvConfig, EnvError, RobotModel, ToyEnv};

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("missing data: {0}")]
    MissingData(&'static str),
    #[error("invalid adaptation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Finetune,
    Continual,
    Residual,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "finetune" => Ok(Strategy::Finetune),
            "continual" => Ok(Strategy::Continual),
            "residual" => Ok(Strategy::Residual),
            other => Err(format!("unknown strategy `{other}` (finetune | continual | residual)")),
        }
    }
}

/// Regime of a clip, from where it was recorded.
pub fn regime_of(clip: &MotionClip) -> Regime {
    if clip.source_id == SourceId::Adaptation {
        Regime::Adapt
    } else {
        Regime::General
    }
}

/// Clips for the two regimes.
#[derive(Debug, Clone, Default)]
pub struct AdaptData {
    pub general: Vec<Arc<MotionClip>>,
    pub adapt: Vec<Arc<MotionClip>>,
}

impl AdaptData {
    /// Splits clips by regime tag.
    pub fn from_clips(clips: impl IntoIterator<Item = Arc<MotionClip>>) -> Self {
        let mut d = Self::default();
        for c in clips {
            match regime_of(&c) {
                Regime::Adapt => d.adapt.push(c),
                Regime::General => d.general.push(c),
            }
        }
        d
    }
}

/// Budgets shared by imitation and adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitationConfig {
    pub seed: u64,
    /// Data-aggregation rounds; round 0 is driven by the teacher.
    pub rounds: usize,
    pub episodes_per_round: usize,
    /// Episode length cap while collecting (control steps).
    pub horizon: usize,
    pub grad_steps_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub obs: ObservationSpec,
    pub env: EnvConfig,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 4,
            episodes_per_round: 16,
            horizon: 150,
            grad_steps_per_round: 400,
            batch_size: 256,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            obs: ObservationSpec::default(),
            env: EnvConfig::default(),
        }
    }
}

impl ImitationConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        if self.rounds == 0 || self.episodes_per_round == 0 || self.horizon == 0 || self.batch_size == 0 {
            return Err(AdaptError::InvalidConfig("rounds, episodes_per_round, horizon and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AdaptError::InvalidConfig("learning_rate must be positive".into()));
        }
        self.env.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub strategy: Strategy,
    pub budget: ImitationConfig,
    /// Share of adaptation samples per batch for the continual strategy.
    pub adapt_fraction: f64,
    pub shift: StreamShift,
    pub distill: DistillConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Residual,
            budget: ImitationConfig { rounds: 8, episodes_per_round: 32, grad_steps_per_round: 2000, ..ImitationConfig::default() },
            adapt_fraction: 0.5,
            shift: StreamShift::default(),
            distill: DistillConfig::default(),
        }
    }
}

impl AdaptConfig {
    /// Settings of the toy interface-shift experiment: the general regime is
    /// weighted 4x in distillation.
    pub fn toy_experiment(strategy: Strategy, seed: u64) -> Self {
        let mut cfg = Self { strategy, ..Self::default() };
        cfg.budget.seed = seed;
        cfg.distill.w_general = 4.0;
        cfg
    }
}

/// Who drives the robot during collection.
enum Driver<'a> {
    Expert,
    Net(&'a NetPolicy),
}

/// Runs episodes in one regime and records normalized observations with the
/// privileged expert's action as the label.
#[allow(clippy::too_many_arguments)]
fn collect(
    driver: &Driver<'_>,
    clips: &[Arc<MotionClip>],
    feed: &ReferenceFeed,
    normalizer: Option<&ObsNormalizer>,
    cfg: &ImitationConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, AdaptError> {
    let per_episode: Result<Vec<Vec<(Vec<f64>, Vec<f64>)>>, AdaptError> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let s = episode_seed(seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let clip = clips.choose(&mut rng).expect("non-empty clips").clone();
            let model = RobotModel::<f64>::toy_biped();
            let mut env = ToyEnv::new(model.clone(), cfg.env.clone(), RewardSpec::default())?;
            env.randomize(&mut rng);
            let start = rng.random_range(0..clip.frames() - 1);
            let mut obs = env.reset(clip.clone(), start)?;
            let seen = feed.observed_clip(&clip, model.anchor, s);
            let mut observer = EpisodeObserver::new(&cfg.obs, &model, seen, &obs, Some(rng.random()));
            let mut out = Vec::new();
            for _ in 0..cfg.horizon {
                let (raw, _) = observer.observe(&obs);
                let label = ExpertPolicy::action(&model, &policy_reference(&clip, obs.frame));
                let action = match driver {
                    Driver::Expert => label.clone(),
                    Driver::Net(p) => p.action(&raw),
                };
                out.push((raw, label));
                let r = env.step(&action)?;
                if r.termination.is_some() {
                    break;
                }
                obs = r.obs;
            }
            Ok(out)
        })
        .collect();
    let mut rows: Vec<(Vec<f64>, Vec<f64>)> = per_episode?.into_iter().flatten().collect();
    if let Some(n) = normalizer {
        for (o, _) in rows.iter_mut() {
            *o = n.normalize(o);
        }
    }
    Ok(rows)
}

fn to_samples(rows: Vec<(Vec<f64>, Vec<f64>)>, regime: Regime) -> Vec<DistillSample> {
    rows.into_iter().map(|(obs, label)| DistillSample { obs, regime: Some(regime), label: Some(label) }).collect()
}

/// Draws a batch with `adapt_fraction` of the samples from `adapt`.
fn mixed_batch<R: Rng + ?Sized>(general: &[DistillSample], adapt: &[DistillSample], size: usize, adapt_fraction: f64, rng: &mut R) -> Vec<DistillSample> {
    let n_adapt = if general.is_empty() {
        size
    } else if adapt.is_empty() {
        0
    } else {
        (size as f64 * adapt_fraction).round() as usize
    };
    let mut batch = Vec::with_capacity(size);
    for k in 0..size {
        let pool = if k < n_adapt { adapt } else { general };
        batch.push(pool[rng.random_range(0..pool.len())].clone());
    }
    batch
}

/// One supervised step of every network parameter toward each sample's
/// teacher.
fn supervised_step(net: &mut PolicyNet<f64>, opt: &mut Adam<f64>, teachers: &Teachers<'_>, batch: &[DistillSample]) -> Result<f64, AdaptError> {
    let mut targets = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        targets.push(match s.regime.ok_or(DistillError::UntaggedSample(i))? {
            Regime::Adapt => teachers.adapt.teach(s, i)?,
            Regime::General => teachers.general.teach(s, i)?,
        });
    }
    let obs = batch_from_rows(&batch.iter().map(|s| s.obs.clone()).collect::<Vec<_>>());
    let (loss, grads) = net.mse_loss_grad(&obs, &batch_from_rows(&targets))?;
    opt.step(net.params_mut(), &grads);
    Ok(loss)
}

/// Result of an imitation or adaptation run.
#[derive(Debug, Clone)]
pub struct ImitationOutcome {
    pub policy: NetPolicy,
    /// Mean training loss per round.
    pub losses: Vec<f64>,
}

/// Trains a general tracker by imitating the privileged expert on the
/// general clips, aggregating data over rounds.
pub fn behavior_clone(clips: &[Arc<MotionClip>], cfg: &ImitationConfig) -> Result<ImitationOutcome, AdaptError> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(AdaptError::MissingData("general clips"));
    }
    let model = RobotModel::<f64>::toy_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let in_dim = cfg.obs.actor_dim(model.dof());
    let mut widths = vec![in_dim];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(model.dof());
    let mut net = PolicyNet::init(&widths, false, 1.0, &mut rng)?;
    let mut opt = Adam::new(net.num_params(), cfg.learning_rate);
    let feed = ReferenceFeed::Direct;
    let mut policy = NetPolicy::new(net.clone(), ObsNormalizer::new(in_dim), cfg.obs.clone());
    let mut raw_data: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut losses = Vec::new();
    for round in 0..cfg.rounds {
        let driver = if round == 0 { Driver::Expert } else { Driver::Net(&policy) };
        let seed = rng.random();
        let rows = collect(&driver, clips, &feed, None, cfg, cfg.episodes_per_round, seed)?;
        raw_data.extend(rows);
        if round == 0 {
            let mut norm = ObsNormalizer::new(in_dim);
            norm.update(&raw_data.iter().map(|(o, _)| o.clone()).collect::<Vec<_>>());
            policy.normalizer = norm;
        }
        let samples: Vec<DistillSample> = raw_data
            .iter()
            .map(|(o, l)| DistillSample { obs: policy.normalizer.normalize(o), regime: Some(Regime::General), label: Some(l.clone()) })
            .collect();
        let teachers = Teachers { adapt: &RecordedTeacher, general: &RecordedTeacher };
        let mut sum = 0.0;
        for _ in 0..cfg.grad_steps_per_round {
            let batch = mixed_batch(&samples, &[], cfg.batch_size, 0.0, &mut rng);
            sum += supervised_step(&mut net, &mut opt, &teachers, &batch)?;
        }
        losses.push(sum / cfg.grad_steps_per_round.max(1) as f64);
        policy.actor = net.clone();
        log::info!("imitation round {round}: loss {:.5}, {} samples", losses[round], samples.len());
    }
    Ok(ImitationOutcome { policy, losses })
}

/// Adapts `base` to the streamed interface with the configured strategy.
/// The general-regime teacher is the frozen base; the adaptation teacher is
/// the privileged expert (recorded labels).
pub fn adapt_strategy(base: &NetPolicy, data: &AdaptData, cfg: &AdaptConfig) -> Result<ImitationOutcome, AdaptError> {
    let b = &cfg.budget;
    b.validate()?;
    cfg.distill.validate()?;
    cfg.shift.stages.iter().try_for_each(|s| s.validate()).map_err(|e| AdaptError::InvalidConfig(e.to_string()))?;
    if data.adapt.is_empty() {
        return Err(AdaptError::MissingData("adaptation clips"));
    }
    let needs_general = cfg.strategy != Strategy::Finetune;
    if needs_general && data.general.is_empty() {
        return Err(AdaptError::MissingData("general clips"));
    }
    if !(0.0..=1.0).contains(&cfg.adapt_fraction) {
        return Err(AdaptError::InvalidConfig("adapt_fraction must lie in [0, 1]".into()));
    }
    let model = RobotModel::<f64>::toy_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
    let frozen = base.actor.clone();
    let streamed = ReferenceFeed::Streamed(cfg.shift.clone());
    let norm = base.normalizer.clone();

    let mut student = base.clone();
    student.residual = None;
    let mut net = base.actor.clone();
    let mut opt = Adam::new(net.num_params(), b.learning_rate);
    let mut distiller = match cfg.strategy {
        Strategy::Residual => Some(Distiller::new(b.obs.actor_dim(model.dof()), model.dof(), cfg.distill.clone(), &mut rng)?),
        _ => None,
    };
    if let Some(d) = &distiller {
        student.residual = Some(d.residual.clone());
    }
    let teacher_rollouts = cfg.strategy == Strategy::Residual && cfg.distill.rollout == RolloutSource::Teacher;

    let mut general: Vec<DistillSample> = Vec::new();
    let mut adapt: Vec<DistillSample> = Vec::new();
    let mut losses = Vec::new();
    for round in 0..b.rounds {
        let seed_a: u64 = rng.random();
        let seed_g: u64 = rng.random();
        let student_feed = student.clone().with_feed(streamed.clone());
        let drv_a = if round == 0 || teacher_rollouts { Driver::Expert } else { Driver::Net(&student_feed) };
        adapt.extend(to_samples(collect(&drv_a, &data.adapt, &streamed, Some(&norm), b, b.episodes_per_round, seed_a)?, Regime::Adapt));
        if needs_general {
            let direct = student.clone();
            let drv_g = if teacher_rollouts { Driver::Net(base) } else { Driver::Net(&direct) };
            general.extend(to_samples(
                collect(&drv_g, &data.general, &ReferenceFeed::Direct, Some(&norm), b, b.episodes_per_round, seed_g)?,
                Regime::General,
            ));
        }
        let teachers = Teachers { adapt: &RecordedTeacher, general: &frozen as &dyn Teacher };
        let mut sum = 0.0;
        for _ in 0..b.grad_steps_per_round {
            sum += match cfg.strategy {
                Strategy::Finetune => {
                    let batch = mixed_batch(&[], &adapt, b.batch_size, 1.0, &mut rng);
                    supervised_step(&mut net, &mut opt, &teachers, &batch)?
                }
                Strategy::Continual => {
                    let batch = mixed_batch(&general, &adapt, b.batch_size, cfg.adapt_fraction, &mut rng);
                    supervised_step(&mut net, &mut opt, &teachers, &batch)?
                }
                Strategy::Residual => {
                    let d = distiller.as_mut().expect("residual strategy");
                    let batch = mixed_batch(&general, &adapt, d.cfg.batch_size, d.cfg.adapt_fraction, &mut rng);
                    d.step(&frozen, &teachers, &batch)?
                }
            };
        }
        losses.push(sum / b.grad_steps_per_round.max(1) as f64);
        match &distiller {
            Some(d) => student.residual = Some(d.residual.clone()),
            None => student.actor = net.clone(),
        }
        log::info!("{:?} round {round}: loss {:.5}", cfg.strategy, losses[round]);
    }
    Ok(ImitationOutcome { policy: student, losses })
}
