//! Episode rollouts and tracking metrics.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{EnvConfig, EnvError, StepObs, Termination, ToyEnv};
use super::model::{BodySet, RobotModel};
use crate::motion_bank::MotionClip;
use crate::reward::{FrameState, RewardSpec};

/// What a policy asks the environment to do for one control tick.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyAction {
    Joints(Vec<f64>),
    /// Jump onto the next reference frame (oracle behaviour).
    Teleport,
}

/// Context handed to a policy at the start of an episode.
pub struct EpisodeInfo<'a> {
    pub clip: &'a MotionClip,
    pub start_frame: usize,
    pub seed: u64,
    pub model: &'a RobotModel<f64>,
    pub dt: f64,
}

/// A controller evaluated over whole episodes. Per-episode state such as
/// observation history lives in `Memory`, so one policy can drive many
/// episodes in parallel.
pub trait Policy: Sync {
    type Memory: Send;
    fn start(&self, info: &EpisodeInfo<'_>, first: &StepObs) -> Self::Memory;
    fn act(&self, memory: &mut Self::Memory, obs: &StepObs) -> PolicyAction;
}

/// Follows the reference exactly.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    type Memory = ();
    fn start(&self, _: &EpisodeInfo<'_>, _: &StepObs) {}
    fn act(&self, _: &mut (), _: &StepObs) -> PolicyAction {
        PolicyAction::Teleport
    }
}

/// Emits a fixed action every tick.
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    type Memory = ();
    fn start(&self, _: &EpisodeInfo<'_>, _: &StepObs) {}
    fn act(&self, _: &mut (), _: &StepObs) -> PolicyAction {
        PolicyAction::Joints(self.0.clone())
    }
}

/// Tracking metrics averaged over every simulated step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[allow(non_snake_case)]
pub struct Metrics {
    pub E_AP: f64,
    pub E_AV: f64,
    pub E_BP: f64,
    pub E_BV: f64,
    pub E_EP: f64,
    pub success_rate: f64,
    pub avg_steps: f64,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "E_AP,E_AV,E_BP,E_BV,E_EP,success_rate,avg_steps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.E_AP, self.E_AV, self.E_BP, self.E_BV, self.E_EP, self.success_rate, self.avg_steps
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// Error sums for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeStats {
    pub steps: usize,
    pub success: bool,
    pub sum_ap: f64,
    pub sum_av: f64,
    pub sum_bp: f64,
    pub sum_bv: f64,
    pub sum_ep: f64,
    pub termination: Option<Termination>,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mean_dist(idx: &[usize], a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    idx.iter().map(|&i| dist(a[i], b[i])).sum::<f64>() / idx.len() as f64
}

impl EpisodeStats {
    fn accumulate(&mut self, model: &RobotModel<f64>, robot: &FrameState<f64>, reference: &FrameState<f64>) {
        let a = model.anchor;
        let all = model.body_set(BodySet::All);
        let ee = model.body_set(BodySet::EndEffectors);
        self.sum_ap += dist(robot.body_pos[a], reference.body_pos[a]);
        self.sum_av += dist(robot.body_lin_vel[a], reference.body_lin_vel[a]);
        self.sum_bp += mean_dist(&all, &robot.body_pos, &reference.body_pos);
        self.sum_bv += mean_dist(&all, &robot.body_lin_vel, &reference.body_lin_vel);
        self.sum_ep += mean_dist(&ee, &robot.body_pos, &reference.body_pos);
        self.steps += 1;
    }
}

/// Reduces episodes in order, so results do not depend on scheduling.
pub fn reduce_metrics(episodes: &[EpisodeStats]) -> Metrics {
    let steps: usize = episodes.iter().map(|e| e.steps).sum();
    let n = episodes.len().max(1) as f64;
    let per_step = |f: fn(&EpisodeStats) -> f64| {
        if steps == 0 {
            0.0
        } else {
            episodes.iter().map(f).sum::<f64>() / steps as f64
        }
    };
    Metrics {
        E_AP: per_step(|e| e.sum_ap),
        E_AV: per_step(|e| e.sum_av),
        E_BP: per_step(|e| e.sum_bp),
        E_BV: per_step(|e| e.sum_bv),
        E_EP: per_step(|e| e.sum_ep),
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        avg_steps: steps as f64 / n,
    }
}

/// Seed of episode `i` under a run seed.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs one episode from `start` until termination.
pub fn run_episode<P: Policy>(
    policy: &P,
    env: &mut ToyEnv,
    clip: Arc<MotionClip>,
    start: usize,
    seed: u64,
) -> Result<EpisodeStats, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    env.randomize(&mut rng);
    let mut obs = env.reset(clip.clone(), start)?;
    let info = EpisodeInfo { clip: &clip, start_frame: start, seed, model: env.model(), dt: env.config().dt };
    let mut memory = policy.start(&info, &obs);
    let model = env.model().clone();
    let mut stats = EpisodeStats::default();
    loop {
        let result = match policy.act(&mut memory, &obs) {
            PolicyAction::Joints(a) => env.step(&a)?,
            PolicyAction::Teleport => env.step_teleport()?,
        };
        stats.accumulate(&model, &result.obs.robot, &result.obs.reference);
        obs = result.obs;
        if let Some(t) = result.termination {
            stats.success = t.is_success();
            stats.termination = Some(t);
            return Ok(stats);
        }
    }
}

/// Evaluates `episodes` episodes cycling through `clips` from frame 0.
/// Episodes run in parallel; the reduction is ordered by episode index.
pub fn evaluate_clips<P: Policy>(
    policy: &P,
    clips: &[Arc<MotionClip>],
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Metrics, EnvError> {
    cfg.validate()?;
    let stats: Result<Vec<EpisodeStats>, EnvError> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = ToyEnv::new(RobotModel::toy_biped(), cfg.clone(), RewardSpec::default())?;
            run_episode(policy, &mut env, clips[i % clips.len()].clone(), 0, episode_seed(seed, i))
        })
        .collect();
    Ok(reduce_metrics(&stats?))
}

/// Evaluates over every motion of a bank.
pub fn evaluate<P: Policy>(
    policy: &P,
    bank: &crate::motion_bank::MotionBank,
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Metrics, EnvError> {
    let clips: Vec<Arc<MotionClip>> = (0..bank.motion_count())
        .map(|m| Arc::new(bank.clip(m).expect("index in range")))
        .collect();
    evaluate_clips(policy, &clips, cfg, episodes, seed)
}
