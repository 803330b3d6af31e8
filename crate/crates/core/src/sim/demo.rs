//! Reference clips for the toy chain, built from joint trajectories.

use super::kinematics::forward_kinematics;
use super::model::RobotModel;
use crate::motion_bank::{MotionClip, SourceId};
use crate::quat::Quat;

/// Static foot sink when the robot stands on both feet with the default
/// contact stiffness.
pub const STANDING_SINK: f64 = 0.0049;

/// Central differences inside, one-sided at the ends.
fn differentiate(rows: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let n = rows.len();
    (0..n)
        .map(|t| {
            let (a, b, span) = match t {
                0 => (0, 1.min(n - 1), dt),
                _ if t + 1 == n => (t - 1, t, dt),
                _ => (t - 1, t + 1, 2.0 * dt),
            };
            rows[b].iter().zip(&rows[a]).map(|(x, y)| (x - y) / span).collect()
        })
        .collect()
}

/// Turns per-frame joint angles into a full clip. The torso stays upright at
/// `x = 0` and its height is chosen so the lowest foot sinks `sink` below the
/// ground plane. Velocities come from finite differences.
pub fn clip_from_joint_trajectory(
    model: &RobotModel<f64>,
    joints: &[Vec<f64>],
    fps: f32,
    sink: f64,
    label: &str,
    source_id: SourceId,
) -> MotionClip {
    let base: Vec<[f64; 3]> = joints
        .iter()
        .map(|q| {
            let probe = forward_kinematics(model, [0.0, 0.0, 0.0], q);
            let lowest = model.feet.iter().map(|&f| probe.pos[f][2]).fold(f64::INFINITY, f64::min);
            [0.0, -lowest - sink, 0.0]
        })
        .collect();
    clip_from_base_trajectory(model, &base, joints, fps, label, source_id)
}

/// Builds a clip from per-frame base coordinates `[x, z, pitch]` and joint
/// angles. Velocities come from finite differences.
pub fn clip_from_base_trajectory(
    model: &RobotModel<f64>,
    base: &[[f64; 3]],
    joints: &[Vec<f64>],
    fps: f32,
    label: &str,
    source_id: SourceId,
) -> MotionClip {
    let dt = 1.0 / fps as f64;
    let bodies = model.body_count();
    let mut pos_rows = Vec::with_capacity(joints.len());
    let mut angle_rows = Vec::with_capacity(joints.len());
    for (b, q) in base.iter().zip(joints) {
        let place = forward_kinematics(model, *b, q);
        pos_rows.push(place.pos.iter().flatten().copied().collect::<Vec<f64>>());
        angle_rows.push(place.angle.clone());
    }
    let joint_vel = differentiate(joints, dt);
    let lin_vel = differentiate(&pos_rows, dt);
    let ang_vel = differentiate(&angle_rows, dt);
    let f32s = |rows: &[Vec<f64>]| rows.iter().flatten().map(|&x| x as f32).collect::<Vec<f32>>();
    let mut body_quat_w = Vec::with_capacity(joints.len() * bodies * 4);
    let mut body_ang_vel_w = Vec::with_capacity(joints.len() * bodies * 3);
    for (angles, rates) in angle_rows.iter().zip(&ang_vel) {
        for (&a, &r) in angles.iter().zip(rates) {
            body_quat_w.extend(Quat::from_pitch(a).to_array().map(|x| x as f32));
            body_ang_vel_w.extend([0.0, r as f32, 0.0]);
        }
    }
    MotionClip {
        fps,
        dof: model.dof(),
        bodies,
        joint_pos: f32s(joints),
        joint_vel: f32s(&joint_vel),
        body_pos_w: f32s(&pos_rows),
        body_quat_w,
        body_lin_vel_w: f32s(&lin_vel),
        body_ang_vel_w,
        label: label.to_string(),
        source_id,
    }
}

/// Leg angles for a squat of hip flexion `hip_extra` (rad) that keep each
/// foot at its default horizontal offset from the torso.
pub fn squat_legs(model: &RobotModel<f64>, hip_extra: f64) -> [f64; 4] {
    let thigh = model.bodies[2].tip[2].abs();
    let shank = model.bodies[3].tip[2].abs();
    let base = forward_kinematics(model, [0.0; 3], &model.q_default);
    let foot_x = base.pos[model.feet[0]][0];
    let hip = model.q_default[0] - hip_extra;
    // Foot x = -thigh sin(hip) - shank sin(hip + knee).
    let shank_angle = ((-foot_x - thigh * hip.sin()) / shank).clamp(-1.0, 1.0).asin();
    let knee = shank_angle - hip;
    [hip, knee, -hip, -knee]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemoMotion {
    Stand,
    Squat { depth: f64, freq: f64 },
    Wave { amp: f64, freq: f64 },
    SquatWave { depth: f64, amp: f64, freq: f64 },
}

impl DemoMotion {
    pub fn joints_at(&self, model: &RobotModel<f64>, t: f64) -> Vec<f64> {
        let mut q = model.q_default.clone();
        let tau = std::f64::consts::TAU;
        let (depth, amp, freq) = match *self {
            DemoMotion::Stand => (0.0, 0.0, 0.0),
            DemoMotion::Squat { depth, freq } => (depth, 0.0, freq),
            DemoMotion::Wave { amp, freq } => (0.0, amp, freq),
            DemoMotion::SquatWave { depth, amp, freq } => (depth, amp, freq),
        };
        if depth != 0.0 {
            let s = depth * 0.5 * (1.0 - (tau * freq * t).cos());
            q[..4].copy_from_slice(&squat_legs(model, s));
        }
        if amp != 0.0 {
            let w = amp * (tau * freq * t).sin();
            q[4] += w;
            q[5] -= w;
        }
        q
    }

    pub fn clip(&self, model: &RobotModel<f64>, fps: f32, seconds: f64, label: &str, source: SourceId) -> MotionClip {
        let frames = (seconds * fps as f64).round() as usize;
        let joints: Vec<Vec<f64>> = (0..frames).map(|k| self.joints_at(model, k as f64 / fps as f64)).collect();
        clip_from_joint_trajectory(model, &joints, fps, STANDING_SINK, label, source)
    }
}

/// A small mixed bank: standing, squatting, waving and both at once.
pub fn demo_clips(model: &RobotModel<f64>) -> Vec<MotionClip> {
    vec![
        DemoMotion::Stand.clip(model, 50.0, 4.0, "stand still", SourceId::Synthetic),
        DemoMotion::Squat { depth: 0.6, freq: 0.5 }.clip(model, 50.0, 6.0, "slow squats", SourceId::OpticalMocap),
        DemoMotion::Wave { amp: 0.8, freq: 1.0 }.clip(model, 50.0, 5.0, "wave both arms", SourceId::InertialMocap),
        DemoMotion::SquatWave { depth: 0.4, amp: 0.6, freq: 0.75 }.clip(model, 50.0, 6.0, "squat while waving", SourceId::Public),
    ]
}

/// Squatting motions as recorded through a teleoperation interface.
pub fn adaptation_clips(model: &RobotModel<f64>) -> Vec<MotionClip> {
    vec![
        DemoMotion::Squat { depth: 0.5, freq: 0.4 }.clip(model, 50.0, 5.0, "teleop squat slow", SourceId::Adaptation),
        DemoMotion::Squat { depth: 0.7, freq: 0.6 }.clip(model, 50.0, 5.0, "teleop squat deep", SourceId::Adaptation),
        DemoMotion::SquatWave { depth: 0.5, amp: 0.5, freq: 0.6 }.clip(model, 50.0, 5.0, "teleop squat and wave", SourceId::Adaptation),
    ]
}
