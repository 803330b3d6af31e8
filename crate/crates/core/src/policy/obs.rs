//! Actor and critic observations.
//!
//! The actor sees a history of noisy proprioceptive frames; the critic sees the
//! current noise-free proprioceptive frame plus privileged state.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::reward::FrameState;
use crate::scalar::Real;
use crate::sim::RobotModel;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObsError {
    #[error("history holds {have} frames, needs {needed}")]
    HistoryUnderfull { have: usize, needed: usize },
}

/// Half-widths of the uniform noise added to each proprioceptive term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseRanges {
    pub anchor_ori: f64,
    pub base_ang_vel: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
}

impl Default for NoiseRanges {
    fn default() -> Self {
        Self { anchor_ori: 0.05, base_ang_vel: 0.2, joint_pos: 0.01, joint_vel: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSpec {
    pub history: usize,
    pub noise: NoiseRanges,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        Self { history: 5, noise: NoiseRanges::default() }
    }
}

/// Width of each named block inside a proprioceptive frame, in order.
pub fn proprio_layout(dof: usize) -> [(&'static str, usize); 7] {
    [
        ("ref_joint_pos", dof),
        ("ref_joint_vel", dof),
        ("anchor_ori_error", 6),
        ("base_ang_vel", 3),
        ("joint_pos", dof),
        ("joint_vel", dof),
        ("last_action", dof),
    ]
}

/// Width of each privileged block appended for the critic.
pub fn privileged_layout(bodies: usize) -> [(&'static str, usize); 5] {
    [
        ("anchor_pos_error", 3),
        ("body_pos", 3 * bodies),
        ("body_ori", 6 * bodies),
        ("base_lin_vel", 3),
        ("ref_base_lin_vel", 3),
    ]
}

impl ObservationSpec {
    pub fn proprio_dim(&self, dof: usize) -> usize {
        proprio_layout(dof).iter().map(|(_, w)| w).sum()
    }

    pub fn actor_dim(&self, dof: usize) -> usize {
        self.history * self.proprio_dim(dof)
    }

    pub fn critic_dim(&self, dof: usize, bodies: usize) -> usize {
        self.proprio_dim(dof) + privileged_layout(bodies).iter().map(|(_, w)| w).sum::<usize>()
    }

    /// Stable hash of the observation layout, stored in checkpoints.
    pub fn layout_hash(&self, dof: usize, bodies: usize) -> String {
        use sha2::{Digest, Sha256};
        let desc = format!(
            "history={};proprio={:?};privileged={:?};noise={:?}",
            self.history,
            proprio_layout(dof),
            privileged_layout(bodies),
            self.noise
        );
        Sha256::digest(desc.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Rolling window of proprioceptive frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer<T> {
    len: usize,
    frames: VecDeque<Vec<T>>,
}

impl<T: Clone> HistoryBuffer<T> {
    pub fn new(len: usize) -> Self {
        Self { len, frames: VecDeque::with_capacity(len) }
    }

    pub fn push(&mut self, frame: Vec<T>) {
        if self.frames.len() == self.len {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    /// Fills the whole window with copies of `frame` (episode start).
    pub fn prefill(&mut self, frame: Vec<T>) {
        self.frames.clear();
        for _ in 0..self.len {
            self.frames.push_back(frame.clone());
        }
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.len
    }

    pub fn stacked(&self) -> Result<Vec<T>, ObsError> {
        if !self.is_full() {
            return Err(ObsError::HistoryUnderfull { have: self.frames.len(), needed: self.len });
        }
        Ok(self.frames.iter().flat_map(|f| f.iter().cloned()).collect())
    }
}

fn noisy<T: Real, R: Rng + ?Sized>(out: &mut Vec<T>, values: &[T], half: f64, rng: Option<&mut R>) {
    match rng {
        Some(r) if half > 0.0 => out.extend(values.iter().map(|&v| v + T::lit(r.random_range(-half..=half)))),
        _ => out.extend_from_slice(values),
    }
}

/// One proprioceptive frame; noise is applied when `rng` is given.
pub fn proprio_frame<T: Real, R: Rng + ?Sized>(
    robot: &FrameState<T>,
    reference: &FrameState<T>,
    model: &RobotModel<T>,
    noise: &NoiseRanges,
    mut rng: Option<&mut R>,
) -> Vec<T> {
    let a = model.anchor;
    let mut out = Vec::with_capacity(5 * model.dof() + 9);
    out.extend_from_slice(&reference.joint_pos);
    out.extend_from_slice(&reference.joint_vel);
    let ori_err = (robot.body_quat[a].conjugate() * reference.body_quat[a]).to_rot6();
    noisy(&mut out, &ori_err, noise.anchor_ori, rng.as_deref_mut());
    let ang = robot.body_quat[a].inverse_rotate(robot.body_ang_vel[a]);
    noisy(&mut out, &ang, noise.base_ang_vel, rng.as_deref_mut());
    noisy(&mut out, &robot.joint_pos, noise.joint_pos, rng.as_deref_mut());
    noisy(&mut out, &robot.joint_vel, noise.joint_vel, rng.as_deref_mut());
    out.extend_from_slice(&robot.action);
    out
}

/// Privileged critic terms, all in the robot's anchor frame.
pub fn privileged_frame<T: Real>(robot: &FrameState<T>, reference: &FrameState<T>, model: &RobotModel<T>) -> Vec<T> {
    let a = model.anchor;
    let qa = robot.body_quat[a];
    let pa = robot.body_pos[a];
    let local = |p: [T; 3]| qa.inverse_rotate([p[0] - pa[0], p[1] - pa[1], p[2] - pa[2]]);
    let mut out = Vec::new();
    out.extend(local(reference.body_pos[a]));
    for b in 0..model.body_count() {
        out.extend(local(robot.body_pos[b]));
    }
    for b in 0..model.body_count() {
        out.extend((qa.conjugate() * robot.body_quat[b]).to_rot6());
    }
    out.extend(qa.inverse_rotate(robot.body_lin_vel[a]));
    out.extend(qa.inverse_rotate(reference.body_lin_vel[a]));
    out
}

/// Pushes the current (noisy when `rng` is given) proprio frame into `history`
/// and returns `(actor_obs, critic_obs)`.
pub fn build_observation<T: Real, R: Rng + ?Sized>(
    robot: &FrameState<T>,
    reference: &FrameState<T>,
    model: &RobotModel<T>,
    spec: &ObservationSpec,
    history: &mut HistoryBuffer<T>,
    rng: Option<&mut R>,
) -> Result<(Vec<T>, Vec<T>), ObsError> {
    history.push(proprio_frame(robot, reference, model, &spec.noise, rng));
    let actor = history.stacked()?;
    let mut critic = proprio_frame::<T, R>(robot, reference, model, &spec.noise, None);
    critic.extend(privileged_frame(robot, reference, model));
    Ok((actor, critic))
}

/// Running mean/variance normalizer (parallel-merge update), clipped output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim], count: 1e-4, clip: 5.0 }
    }

    pub fn update(&mut self, rows: &[Vec<f64>]) {
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        let dim = self.mean.len();
        let mut bm = vec![0.0; dim];
        for r in rows {
            for i in 0..dim {
                bm[i] += r[i] / n;
            }
        }
        let mut bv = vec![0.0; dim];
        for r in rows {
            for i in 0..dim {
                bv[i] += (r[i] - bm[i]).powi(2) / n;
            }
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = bm[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bv[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(&v, (&m, &s2))| ((v - m) / (s2 + 1e-8).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::kinematics::frame_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states() -> (FrameState<f64>, FrameState<f64>, RobotModel<f64>) {
        let m = RobotModel::toy_biped();
        let mut g = vec![0.0, 0.5, 0.1];
        g.extend(&m.q_default);
        let gd = vec![0.1, 0.0, 0.3, 0.5, -0.5, 0.2, 0.0, 1.0, -1.0];
        let robot = frame_state(&m, &g, &gd);
        let mut g2 = g.clone();
        g2[1] = 0.55;
        g2[3] += 0.2;
        let reference = frame_state(&m, &g2, &gd);
        (robot, reference, m)
    }

    #[test]
    fn dimensions() {
        let spec = ObservationSpec::default();
        assert_eq!(spec.proprio_dim(6), 39);
        assert_eq!(spec.actor_dim(6), 195);
        assert_eq!(spec.critic_dim(6, 8), 39 + 3 + 24 + 48 + 6);
    }

    #[test]
    fn underfull_history_is_an_error() {
        let (r, g, m) = states();
        let spec = ObservationSpec::default();
        let mut h = HistoryBuffer::new(5);
        let got = build_observation::<f64, ChaCha8Rng>(&r, &g, &m, &spec, &mut h, None);
        assert_eq!(got, Err(ObsError::HistoryUnderfull { have: 1, needed: 5 }));
    }

    #[test]
    fn noise_free_is_deterministic_and_noise_is_bounded() {
        let (r, g, m) = states();
        let spec = ObservationSpec::default();
        let clean = proprio_frame::<f64, ChaCha8Rng>(&r, &g, &m, &spec.noise, None);
        assert_eq!(clean, proprio_frame::<f64, ChaCha8Rng>(&r, &g, &m, &spec.noise, None));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let jp = 12 + 9;
        for _ in 0..20_000 {
            let f = proprio_frame(&r, &g, &m, &spec.noise, Some(&mut rng));
            for j in 0..6 {
                assert!((f[jp + j] - clean[jp + j]).abs() <= 0.01);
            }
            // Reference terms and last action stay clean.
            assert_eq!(&f[..12], &clean[..12]);
            assert_eq!(&f[33..], &clean[33..]);
        }
    }

    #[test]
    fn critic_has_reference_base_velocity_actor_does_not() {
        let (r, mut g, m) = states();
        let spec = ObservationSpec::default();
        let mut h = HistoryBuffer::new(5);
        h.prefill(proprio_frame::<f64, ChaCha8Rng>(&r, &g, &m, &spec.noise, None));
        let (a1, c1) = build_observation::<f64, ChaCha8Rng>(&r, &g, &m, &spec, &mut h, None).unwrap();
        for b in 0..m.body_count() {
            g.body_lin_vel[b][0] += 1.0;
        }
        let (a2, c2) = build_observation::<f64, ChaCha8Rng>(&r, &g, &m, &spec, &mut h, None).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(c1, c2);
        assert_eq!(c1.len(), spec.critic_dim(6, 8));
        assert_eq!(a1.len(), 195);
    }

    #[test]
    fn normalizer_tracks_moments() {
        let mut n = ObsNormalizer::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..100).map(|_| vec![3.0 + 2.0 * (rng.random::<f64>() - 0.5) * 12f64.sqrt()]).collect();
            n.update(&rows);
        }
        assert!((n.mean[0] - 3.0).abs() < 0.05);
        assert!((n.var[0] - 4.0).abs() < 0.2);
    }
}
