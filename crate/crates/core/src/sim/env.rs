//! The toy tracking environment: a planar floating-base chain integrated with
//! semi-implicit Euler under PD control, gravity and spring-damper ground contact.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::control::{action_to_target, pd_torque, ControlError};
use super::kinematics::{self, apply_point_force, forward_kinematics, inverse_point_mass, point_velocity, rot_y, BASE_COORDS};
use super::model::RobotModel;
use crate::motion_bank::MotionClip;
use crate::quat::{quat_distance, Quat};
use crate::reward::{compute_rewards, FrameState, RewardBreakdown, RewardError, RewardSpec};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("step called on a finished or never-reset episode")]
    EnvNotReset,
    #[error("invalid env config: {0}")]
    InvalidConfig(String),
    #[error("clip has {found_dof} joints and {found_bodies} bodies, robot has {dof} and {bodies}")]
    SchemaMismatch { dof: usize, bodies: usize, found_dof: usize, found_bodies: usize },
    #[error("start frame {start} leaves no step in a clip of {frames} frames")]
    StartOutOfRange { start: usize, frames: usize },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactConfig {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping at zero restitution (N s/m).
    pub damping: f64,
    /// Tangential viscous coefficient before the Coulomb cap (N s/m).
    pub tangential_damping: f64,
    /// Below this slip speed the static coefficient applies (m/s).
    pub stick_speed: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self { stiffness: 3000.0, damping: 100.0, tangential_damping: 200.0, stick_speed: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub enabled: bool,
    pub static_friction: [f64; 2],
    pub dynamic_friction: [f64; 2],
    pub restitution: [f64; 2],
    /// Half-width of the default joint position perturbation (rad).
    pub default_joint_pos: f64,
    /// Half-widths of the torso CoM offset along x, y, z (m).
    pub com_offset: [f64; 3],
    pub pushes: bool,
    /// Push interval range (s).
    pub push_interval: [f64; 2],
    /// Half-widths of the base velocity kick along x and z (m/s).
    pub push_velocity: [f64; 2],
    /// Values used when randomization is disabled.
    pub nominal_static_friction: f64,
    pub nominal_dynamic_friction: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            static_friction: [0.3, 1.6],
            dynamic_friction: [0.3, 1.2],
            restitution: [0.0, 0.5],
            default_joint_pos: 0.01,
            com_offset: [0.025, 0.05, 0.05],
            pushes: true,
            push_interval: [1.0, 3.0],
            push_velocity: [0.3, 0.2],
            nominal_static_friction: 1.0,
            nominal_dynamic_friction: 0.8,
        }
    }
}

impl RandomizationConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, pushes: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Control period (s).
    pub dt: f64,
    pub substeps: usize,
    pub max_episode_steps: usize,
    pub anchor_z_threshold: f64,
    pub anchor_ori_threshold: f64,
    pub ee_z_threshold: f64,
    pub gravity: f64,
    pub contact: ContactConfig,
    pub randomization: RandomizationConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            substeps: 8,
            max_episode_steps: 500,
            anchor_z_threshold: 0.25,
            anchor_ori_threshold: 0.8,
            ee_z_threshold: 0.25,
            gravity: 9.81,
            contact: ContactConfig::default(),
            randomization: RandomizationConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.substeps == 0 || self.max_episode_steps == 0 {
            return bad("substeps and max_episode_steps must be at least 1");
        }
        for (name, v) in [
            ("anchor_z_threshold", self.anchor_z_threshold),
            ("anchor_ori_threshold", self.anchor_ori_threshold),
            ("ee_z_threshold", self.ee_z_threshold),
        ] {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        let r = &self.randomization;
        for (name, [lo, hi]) in [
            ("static_friction", r.static_friction),
            ("dynamic_friction", r.dynamic_friction),
            ("restitution", r.restitution),
            ("push_interval", r.push_interval),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return bad(&format!("{name} must be a non-negative [lo, hi] range"));
            }
        }
        if !(r.push_interval[0] > 0.0) {
            return bad("push_interval must be positive");
        }
        Ok(())
    }
}

/// Physical parameters drawn at episode start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicsParams {
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub restitution: f64,
    pub q_default: Vec<f64>,
    pub com_offset: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AnchorPosError,
    AnchorOriError,
    EeBodyPosError,
    MotionEnd,
    TimeOut,
}

impl Termination {
    /// Episodes ending by completion or time limit count as successes.
    pub fn is_success(self) -> bool {
        matches!(self, Termination::MotionEnd | Termination::TimeOut)
    }
}

/// Robot and reference state after a step; the raw material for observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StepObs {
    pub robot: FrameState<f64>,
    pub reference: FrameState<f64>,
    /// Reference frame index inside the clip.
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub saturated: Vec<bool>,
    pub pushed: bool,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: StepObs,
    pub reward: RewardBreakdown,
    pub termination: Option<Termination>,
    pub info: StepInfo,
}

pub struct ToyEnv {
    model: RobotModel<f64>,
    cfg: EnvConfig,
    spec: RewardSpec,
    physics: PhysicsParams,
    inv_mass: Vec<f64>,
    push_rng: ChaCha8Rng,
    next_push: Option<f64>,
    clip: Option<Arc<MotionClip>>,
    frame: usize,
    steps: usize,
    time: f64,
    done: bool,
    g: Vec<f64>,
    gd: Vec<f64>,
    robot: FrameState<f64>,
    last_action: Vec<f64>,
    q_des: Vec<f64>,
}

/// Reads frame `t` of a clip as a reference state.
pub fn reference_state(clip: &MotionClip, t: usize) -> FrameState<f64> {
    let (dof, bodies) = (clip.dof, clip.bodies);
    let mut s = FrameState::zeros(dof, bodies);
    let row = |v: &[f32], w: usize| -> Vec<f64> { v[t * w..(t + 1) * w].iter().map(|&x| x as f64).collect() };
    s.joint_pos = row(&clip.joint_pos, dof);
    s.joint_vel = row(&clip.joint_vel, dof);
    let triples = |v: Vec<f64>| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
    s.body_pos = triples(row(&clip.body_pos_w, 3 * bodies));
    s.body_lin_vel = triples(row(&clip.body_lin_vel_w, 3 * bodies));
    s.body_ang_vel = triples(row(&clip.body_ang_vel_w, 3 * bodies));
    s.body_quat = row(&clip.body_quat_w, 4 * bodies)
        .chunks_exact(4)
        .map(|c| Quat::from_array([c[0], c[1], c[2], c[3]]))
        .collect();
    s
}

impl ToyEnv {
    pub fn new(model: RobotModel<f64>, cfg: EnvConfig, spec: RewardSpec) -> Result<Self, EnvError> {
        cfg.validate()?;
        spec.validate()?;
        let n = BASE_COORDS + model.dof();
        let mut inv_mass = vec![1.0 / model.total_mass(), 1.0 / model.total_mass(), 1.0 / model.base_inertia];
        inv_mass.extend(model.armature.iter().map(|j| 1.0 / j));
        let physics = PhysicsParams {
            static_friction: cfg.randomization.nominal_static_friction,
            dynamic_friction: cfg.randomization.nominal_dynamic_friction,
            restitution: 0.0,
            q_default: model.q_default.clone(),
            com_offset: [0.0; 3],
        };
        let robot = FrameState::zeros(model.dof(), model.body_count());
        Ok(Self {
            last_action: vec![0.0; model.dof()],
            q_des: model.q_default.clone(),
            model,
            cfg,
            spec,
            physics,
            inv_mass,
            push_rng: ChaCha8Rng::seed_from_u64(0),
            next_push: None,
            clip: None,
            frame: 0,
            steps: 0,
            time: 0.0,
            done: true,
            g: vec![0.0; n],
            gd: vec![0.0; n],
            robot,
        })
    }

    pub fn toy(cfg: EnvConfig) -> Result<Self, EnvError> {
        Self::new(RobotModel::toy_biped(), cfg, RewardSpec::default())
    }

    pub fn model(&self) -> &RobotModel<f64> {
        &self.model
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn physics(&self) -> &PhysicsParams {
        &self.physics
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn clip(&self) -> Option<&Arc<MotionClip>> {
        self.clip.as_ref()
    }

    /// Generalized position `[x, z, pitch, q..]` and velocity.
    pub fn generalized_state(&self) -> (&[f64], &[f64]) {
        (&self.g, &self.gd)
    }

    /// Draws startup physics and the push schedule. With randomization
    /// disabled the nominal parameters are restored and `rng` is not consumed.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let r = self.cfg.randomization.clone();
        if !r.enabled {
            self.physics = PhysicsParams {
                static_friction: r.nominal_static_friction,
                dynamic_friction: r.nominal_dynamic_friction,
                restitution: 0.0,
                q_default: self.model.q_default.clone(),
                com_offset: [0.0; 3],
            };
        } else {
            let mut uni = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let static_friction = uni(r.static_friction);
            let dynamic_friction = uni(r.dynamic_friction);
            let restitution = uni(r.restitution);
            let q_default = self
                .model
                .q_default
                .iter()
                .map(|&q| q + uni([-r.default_joint_pos, r.default_joint_pos]))
                .collect();
            let com_offset = [0, 1, 2].map(|a| uni([-r.com_offset[a], r.com_offset[a]]));
            self.physics = PhysicsParams { static_friction, dynamic_friction, restitution, q_default, com_offset };
        }
        if r.enabled && r.pushes {
            self.push_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            self.next_push = Some(self.sample_push_interval());
        } else {
            self.next_push = None;
        }
    }

    fn sample_push_interval(&mut self) -> f64 {
        let [lo, hi] = self.cfg.randomization.push_interval;
        if hi > lo {
            self.push_rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    /// Places the robot exactly on frame `start` of `clip`.
    pub fn reset(&mut self, clip: Arc<MotionClip>, start: usize) -> Result<StepObs, EnvError> {
        if clip.dof != self.model.dof() || clip.bodies != self.model.body_count() {
            return Err(EnvError::SchemaMismatch {
                dof: self.model.dof(),
                bodies: self.model.body_count(),
                found_dof: clip.dof,
                found_bodies: clip.bodies,
            });
        }
        if start + 1 >= clip.frames() {
            return Err(EnvError::StartOutOfRange { start, frames: clip.frames() });
        }
        self.clip = Some(clip);
        self.frame = start;
        self.steps = 0;
        self.time = 0.0;
        self.done = false;
        self.last_action.iter_mut().for_each(|a| *a = 0.0);
        let reference = self.reference();
        self.place_on(&reference);
        self.q_des = reference.joint_pos.clone();
        Ok(StepObs { robot: self.robot.clone(), reference, frame: self.frame })
    }

    fn place_on(&mut self, reference: &FrameState<f64>) {
        let a = self.model.anchor;
        let (p, v) = (reference.body_pos[a], reference.body_lin_vel[a]);
        self.g[..BASE_COORDS].copy_from_slice(&[p[0], p[2], kinematics::pitch_of(reference.body_quat[a])]);
        self.gd[..BASE_COORDS].copy_from_slice(&[v[0], v[2], reference.body_ang_vel[a][1]]);
        self.g[BASE_COORDS..].copy_from_slice(&reference.joint_pos);
        self.gd[BASE_COORDS..].copy_from_slice(&reference.joint_vel);
        let mut robot = reference.clone();
        robot.action.iter_mut().for_each(|x| *x = 0.0);
        robot.last_action.iter_mut().for_each(|x| *x = 0.0);
        self.robot = robot;
    }

    /// The reference at the current frame.
    pub fn reference(&self) -> FrameState<f64> {
        reference_state(self.clip.as_ref().expect("clip set"), self.frame)
    }

    pub fn robot_state(&self) -> &FrameState<f64> {
        &self.robot
    }

    /// Overwrites the generalized state (for tests and scripted scenarios).
    pub fn set_state(&mut self, g: &[f64], gd: &[f64]) {
        self.g.copy_from_slice(g);
        self.gd.copy_from_slice(gd);
        self.robot = self.measure(&[]);
    }

    /// Applies an action for one control period.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.done || self.clip.is_none() {
            return Err(EnvError::EnvNotReset);
        }
        let q_des = action_to_target(action, &self.physics.q_default, &self.model)?;
        let pushed = self.maybe_push();
        let qd0: Vec<f64> = self.gd[BASE_COORDS..].to_vec();
        let h = self.cfg.dt / self.cfg.substeps as f64;
        let mut torque = vec![0.0; self.model.dof()];
        let mut saturated = vec![false; self.model.dof()];
        let mut contacts = vec![[0.0; 3]; self.model.body_count()];
        for _ in 0..self.cfg.substeps {
            let out = self.substep(&q_des, h, &mut contacts)?;
            torque = out.torque;
            for (s, o) in saturated.iter_mut().zip(out.saturated) {
                *s |= o;
            }
        }
        let acc: Vec<f64> = self.gd[BASE_COORDS..].iter().zip(&qd0).map(|(a, b)| (a - b) / self.cfg.dt).collect();
        self.q_des = q_des;
        self.robot = self.measure(&contacts);
        self.robot.joint_torque = torque;
        self.robot.joint_acc = acc;
        self.robot.action = action.to_vec();
        self.robot.last_action = std::mem::replace(&mut self.last_action, action.to_vec());
        Ok(self.finish_step(StepInfo { saturated, pushed, steps: 0 }))
    }

    /// Moves the robot onto the next reference frame without simulating;
    /// used by the oracle policy.
    pub fn step_teleport(&mut self) -> Result<StepResult, EnvError> {
        if self.done || self.clip.is_none() {
            return Err(EnvError::EnvNotReset);
        }
        self.frame += 1;
        let reference = self.reference();
        self.frame -= 1;
        self.place_on(&reference);
        Ok(self.finish_step(StepInfo { saturated: vec![false; self.model.dof()], pushed: false, steps: 0 }))
    }

    fn finish_step(&mut self, mut info: StepInfo) -> StepResult {
        let frames = self.clip.as_ref().map_or(0, |c| c.frames());
        self.frame = (self.frame + 1).min(frames - 1);
        self.steps += 1;
        self.time += self.cfg.dt;
        info.steps = self.steps;
        let reference = self.reference();
        let reward = compute_rewards(&self.robot, &reference, &self.spec, &self.model).unwrap_or_else(|e| {
            // Shapes are validated at reset; a failure here means corrupted clip data.
            panic!("reward evaluation failed on validated shapes: {e}")
        });
        let termination = self.check_termination(&reference, frames);
        self.done = termination.is_some();
        StepResult { obs: StepObs { robot: self.robot.clone(), reference, frame: self.frame }, reward, termination, info }
    }

    /// Error terminations first, then motion end, then time out.
    fn check_termination(&self, reference: &FrameState<f64>, frames: usize) -> Option<Termination> {
        let a = self.model.anchor;
        let (r, g) = (&self.robot, reference);
        if (r.body_pos[a][2] - g.body_pos[a][2]).abs() > self.cfg.anchor_z_threshold {
            return Some(Termination::AnchorPosError);
        }
        let ori = quat_distance(r.body_quat[a].normalized(), g.body_quat[a].normalized()).unwrap_or(f64::INFINITY);
        if ori > self.cfg.anchor_ori_threshold {
            return Some(Termination::AnchorOriError);
        }
        let ee = self.model.body_set(super::model::BodySet::EndEffectors);
        if ee.iter().any(|&b| (r.body_pos[b][2] - g.body_pos[b][2]).abs() > self.cfg.ee_z_threshold) {
            return Some(Termination::EeBodyPosError);
        }
        if self.frame + 1 >= frames {
            return Some(Termination::MotionEnd);
        }
        if self.steps >= self.cfg.max_episode_steps {
            return Some(Termination::TimeOut);
        }
        None
    }

    fn maybe_push(&mut self) -> bool {
        match self.next_push {
            Some(t) if self.time + 1e-12 >= t => {
                let [vx, vz] = self.cfg.randomization.push_velocity;
                let dx = if vx > 0.0 { self.push_rng.random_range(-vx..=vx) } else { 0.0 };
                let dz = if vz > 0.0 { self.push_rng.random_range(-vz..=vz) } else { 0.0 };
                self.gd[0] += dx;
                self.gd[1] += dz;
                let next = t + self.sample_push_interval();
                self.next_push = Some(next);
                true
            }
            _ => false,
        }
    }

    /// World position of the torso's (possibly offset) center of mass.
    fn mass_point(&self, place: &kinematics::Placement<f64>, b: usize) -> [f64; 3] {
        let p = place.pos[b];
        if b != self.model.anchor {
            return p;
        }
        let o = rot_y(place.angle[b], self.physics.com_offset);
        [p[0] + o[0], p[1] + o[1], p[2] + o[2]]
    }

    fn substep(&mut self, q_des: &[f64], h: f64, contacts: &mut [[f64; 3]]) -> Result<super::control::PdOutput<f64>, EnvError> {
        let dof = self.model.dof();
        let place = forward_kinematics(&self.model, [self.g[0], self.g[1], self.g[2]], &self.g[BASE_COORDS..]);
        let mut force = vec![0.0; self.g.len()];
        for b in 0..self.model.body_count() {
            let m = self.model.bodies[b].mass;
            let p = self.mass_point(&place, b);
            apply_point_force(&self.model, &place, b, p, [0.0, 0.0, -m * self.cfg.gravity], &mut force);
        }
        for b in 0..self.model.body_count() {
            let f = self.contact_force(&place, b, h);
            contacts[b] = f;
            if f != [0.0; 3] {
                apply_point_force(&self.model, &place, b, place.pos[b], f, &mut force);
            }
        }
        let zeros = vec![0.0; dof];
        let pd = pd_torque(q_des, &self.g[BASE_COORDS..], &zeros, &self.gd[BASE_COORDS..], &self.model)?;
        for j in 0..dof {
            force[BASE_COORDS + j] += pd.torque[j];
        }
        for k in 0..self.g.len() {
            self.gd[k] += h * force[k] * self.inv_mass[k];
        }
        for j in 0..dof {
            let lim = self.model.velocity_limit[j];
            self.gd[BASE_COORDS + j] = self.gd[BASE_COORDS + j].clamp(-lim, lim);
        }
        for k in 0..self.g.len() {
            self.g[k] += h * self.gd[k];
        }
        Ok(pd)
    }

    /// Spring-damper normal force with a viscous tangential force capped by
    /// Coulomb friction. Damping terms are scaled by `1 / (1 + h c w)`, with `w`
    /// the point's inverse effective mass, which keeps them dissipative for
    /// light distal bodies.
    fn contact_force(&self, place: &kinematics::Placement<f64>, b: usize, h: f64) -> [f64; 3] {
        let p = place.pos[b];
        let depth = -p[2];
        if depth <= 0.0 {
            return [0.0; 3];
        }
        let c = &self.cfg.contact;
        let v = point_velocity(&self.model, place, b, p, &self.gd);
        let w = inverse_point_mass(&self.model, place, b, p, &self.inv_mass);
        let cn = c.damping * (1.0 - self.physics.restitution);
        let fn_ = (c.stiffness * depth - cn * v[2] / (1.0 + h * cn * w[2])).max(0.0);
        let mu = if v[0].abs() < c.stick_speed { self.physics.static_friction } else { self.physics.dynamic_friction };
        let ct = c.tangential_damping;
        let cap = mu * fn_;
        let ft = (-ct * v[0] / (1.0 + h * ct * w[0])).clamp(-cap, cap);
        [ft, 0.0, fn_]
    }

    fn measure(&self, contacts: &[[f64; 3]]) -> FrameState<f64> {
        let mut s = kinematics::frame_state(&self.model, &self.g, &self.gd);
        if contacts.len() == s.contact_forces.len() {
            s.contact_forces.copy_from_slice(contacts);
        }
        s.action = self.robot.action.clone();
        s.last_action = self.robot.last_action.clone();
        s
    }

    /// Mechanical energy: kinetic, gravitational, contact spring and the PD
    /// spring about the current joint targets.
    pub fn energy(&self) -> f64 {
        let place = forward_kinematics(&self.model, [self.g[0], self.g[1], self.g[2]], &self.g[BASE_COORDS..]);
        let mut e = 0.0;
        for k in 0..self.g.len() {
            e += 0.5 * self.gd[k] * self.gd[k] / self.inv_mass[k];
        }
        for b in 0..self.model.body_count() {
            e += self.model.bodies[b].mass * self.cfg.gravity * self.mass_point(&place, b)[2];
            let depth = -place.pos[b][2];
            if depth > 0.0 {
                e += 0.5 * self.cfg.contact.stiffness * depth * depth;
            }
        }
        for j in 0..self.model.dof() {
            let err = self.q_des[j] - self.g[BASE_COORDS + j];
            e += 0.5 * self.model.kp[j] * err * err;
        }
        e
    }

    /// Sets the joint targets used by [`energy`](Self::energy) before any step.
    pub fn hold_targets(&mut self, q_des: Vec<f64>) {
        self.q_des = q_des;
    }
}
