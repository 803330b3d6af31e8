//! Network-driven controllers for the toy environment.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nn::PolicyNet;
use super::obs::{build_observation, proprio_frame, HistoryBuffer, ObsNormalizer, ObservationSpec};
use crate::motion_bank::MotionClip;
use crate::reward::FrameState;
use crate::sim::env::reference_state;
use crate::sim::{EpisodeInfo, Policy, PolicyAction, RobotModel, StepObs};
use crate::teleop::{stream_clip, ChannelConfig, ChannelPreset, ReceiverConfig, TeleopError};

/// A teleoperation interface placed between the motion source and the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamShift {
    pub stages: Vec<ChannelConfig>,
    pub receiver: ReceiverConfig,
    /// Std of Gaussian noise added to streamed joint positions (rad).
    pub value_noise: f64,
}

impl Default for StreamShift {
    fn default() -> Self {
        Self { stages: ChannelPreset::Vr.stages(), receiver: ReceiverConfig::default(), value_noise: 0.02 }
    }
}

impl StreamShift {
    /// The clip as a receiver would reconstruct it after streaming.
    pub fn apply(&self, clip: &MotionClip, anchor: usize, seed: u64) -> Result<MotionClip, TeleopError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_57EA);
        let mut noisy = clip.clone();
        if self.value_noise > 0.0 {
            let n = Normal::new(0.0, self.value_noise).expect("positive std");
            noisy.joint_pos.iter_mut().for_each(|q| *q += n.sample(&mut rng) as f32);
        }
        Ok(stream_clip(&noisy, anchor, &self.stages, &self.receiver, &mut rng)?.0)
    }
}

/// Where the policy's reference observation comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFeed {
    #[default]
    Direct,
    Streamed(StreamShift),
}

impl ReferenceFeed {
    pub fn observed_clip(&self, clip: &MotionClip, anchor: usize, seed: u64) -> Arc<MotionClip> {
        match self {
            ReferenceFeed::Direct => Arc::new(clip.clone()),
            ReferenceFeed::Streamed(shift) => Arc::new(shift.apply(clip, anchor, seed).expect("validated stream shift")),
        }
    }
}

/// The one-step reference a policy consumes at `frame`: the next frame.
pub fn policy_reference(clip: &MotionClip, frame: usize) -> FrameState<f64> {
    reference_state(clip, (frame + 1).min(clip.frames() - 1))
}

/// Per-episode observation state.
pub struct EpisodeObserver {
    pub spec: ObservationSpec,
    pub model: RobotModel<f64>,
    pub clip: Arc<MotionClip>,
    history: HistoryBuffer<f64>,
    rng: Option<ChaCha8Rng>,
}

impl EpisodeObserver {
    /// Prefills the history from the first observation. Noise is drawn only
    /// when `noise_seed` is given.
    pub fn new(spec: &ObservationSpec, model: &RobotModel<f64>, clip: Arc<MotionClip>, first: &StepObs, noise_seed: Option<u64>) -> Self {
        let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
        let reference = policy_reference(&clip, first.frame);
        let frame = proprio_frame(&first.robot, &reference, model, &spec.noise, rng.as_mut());
        let mut history = HistoryBuffer::new(spec.history);
        history.prefill(frame);
        Self { spec: spec.clone(), model: model.clone(), clip, history, rng }
    }

    /// Returns `(actor_obs, critic_obs)` for the current step.
    pub fn observe(&mut self, obs: &StepObs) -> (Vec<f64>, Vec<f64>) {
        let reference = policy_reference(&self.clip, obs.frame);
        build_observation(&obs.robot, &reference, &self.model, &self.spec, &mut self.history, self.rng.as_mut())
            .expect("history is prefilled")
    }

    /// Critic observation for a state without advancing the history.
    pub fn critic_only(&self, obs: &StepObs) -> Vec<f64> {
        let reference = policy_reference(&self.clip, obs.frame);
        let mut c = proprio_frame::<f64, ChaCha8Rng>(&obs.robot, &reference, &self.model, &self.spec.noise, None);
        c.extend(super::obs::privileged_frame(&obs.robot, &reference, &self.model));
        c
    }
}

/// Deterministic (mean-action) controller from a trained actor, optionally
/// with an additive residual network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPolicy {
    pub actor: PolicyNet<f64>,
    pub residual: Option<PolicyNet<f64>>,
    pub normalizer: ObsNormalizer,
    pub spec: ObservationSpec,
    pub feed: ReferenceFeed,
    pub obs_noise: bool,
}

impl NetPolicy {
    pub fn new(actor: PolicyNet<f64>, normalizer: ObsNormalizer, spec: ObservationSpec) -> Self {
        Self { actor, residual: None, normalizer, spec, feed: ReferenceFeed::Direct, obs_noise: false }
    }

    pub fn with_feed(mut self, feed: ReferenceFeed) -> Self {
        self.feed = feed;
        self
    }

    /// Mean action for a raw actor observation.
    pub fn action(&self, actor_obs: &[f64]) -> Vec<f64> {
        let x = self.normalizer.normalize(actor_obs);
        let mut a = self.actor.forward(&x).expect("actor input width");
        if let Some(r) = &self.residual {
            let d = r.forward(&x).expect("residual input width");
            a.iter_mut().zip(d).for_each(|(a, d)| *a += d);
        }
        a
    }
}

impl Policy for NetPolicy {
    type Memory = EpisodeObserver;

    fn start(&self, info: &EpisodeInfo<'_>, first: &StepObs) -> EpisodeObserver {
        let clip = self.feed.observed_clip(info.clip, info.model.anchor, info.seed);
        EpisodeObserver::new(&self.spec, info.model, clip, first, self.obs_noise.then_some(info.seed))
    }

    fn act(&self, memory: &mut EpisodeObserver, obs: &StepObs) -> PolicyAction {
        let (actor_obs, _) = memory.observe(obs);
        PolicyAction::Joints(self.action(&actor_obs))
    }
}

/// Privileged controller that reads the true next reference frame and
/// commands it as the joint target.
#[derive(Debug, Clone, Default)]
pub struct ExpertPolicy;

impl ExpertPolicy {
    pub fn action(model: &RobotModel<f64>, next: &FrameState<f64>) -> Vec<f64> {
        let scale = crate::sim::action_scale(model);
        next.joint_pos.iter().zip(&model.q_default).zip(&scale).map(|((q, d), s)| (q - d) / s).collect()
    }
}

impl Policy for ExpertPolicy {
    type Memory = (Arc<MotionClip>, RobotModel<f64>);

    fn start(&self, info: &EpisodeInfo<'_>, _: &StepObs) -> Self::Memory {
        (Arc::new(info.clip.clone()), info.model.clone())
    }

    fn act(&self, memory: &mut Self::Memory, obs: &StepObs) -> PolicyAction {
        PolicyAction::Joints(Self::action(&memory.1, &policy_reference(&memory.0, obs.frame)))
    }
}
