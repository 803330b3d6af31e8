use serde::{Deserialize, Serialize};

use super::control::{derive_gains, ControlError};
use crate::scalar::Real;

/// Named body groups used by rewards and terminations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodySet {
    Anchor,
    All,
    Upper,
    Lower,
    /// Head and hands, the bodies a VR rig tracks.
    Vr,
    Feet,
    Hands,
    /// Wrists and ankles (hands and feet here).
    EndEffectors,
    /// Bodies allowed to touch the ground: feet and hands.
    ContactAllowed,
}

/// One point body of the planar chain. Its world position is
/// `p_parent + R_parent * pivot + R_self * tip`, with `R_self = R_parent * Ry(q_joint)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec<T> {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: Option<usize>,
    pub pivot: [T; 3],
    pub tip: [T; 3],
    pub mass: T,
}

/// Joint limits, actuator limits, PD gains and chain geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel<T> {
    pub joint_names: Vec<String>,
    pub q_min: Vec<T>,
    pub q_max: Vec<T>,
    pub q_default: Vec<T>,
    pub effort_limit: Vec<T>,
    pub velocity_limit: Vec<T>,
    /// Effective joint inertia `J`, also the joint's diagonal mass entry.
    pub armature: Vec<T>,
    pub natural_freq: T,
    pub damping_ratio: T,
    pub kp: Vec<T>,
    pub kd: Vec<T>,
    pub bodies: Vec<BodySpec<T>>,
    pub anchor: usize,
    pub head: usize,
    pub feet: Vec<usize>,
    pub hands: Vec<usize>,
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    /// Rotational inertia of the floating base about its pitch axis.
    pub base_inertia: T,
}

impl<T: Real> RobotModel<T> {
    pub fn dof(&self) -> usize {
        self.q_default.len()
    }

    pub fn body_count(&self) -> usize {
        self.bodies.len()
    }

    pub fn total_mass(&self) -> T {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    pub fn body_set(&self, set: BodySet) -> Vec<usize> {
        match set {
            BodySet::Anchor => vec![self.anchor],
            BodySet::All => (0..self.body_count()).collect(),
            BodySet::Upper => self.upper.clone(),
            BodySet::Lower => self.lower.clone(),
            BodySet::Vr => {
                let mut v = vec![self.head];
                v.extend(&self.hands);
                v
            }
            BodySet::Feet => self.feet.clone(),
            BodySet::Hands => self.hands.clone(),
            BodySet::EndEffectors | BodySet::ContactAllowed => {
                let mut v = self.hands.clone();
                v.extend(&self.feet);
                v.sort_unstable();
                v
            }
        }
    }

    /// Recomputes `Kp = J wn^2`, `Kd = 2 zeta J wn` for every joint.
    pub fn with_gains(mut self, natural_freq: T, damping_ratio: T) -> Result<Self, ControlError> {
        let mut kp = Vec::with_capacity(self.dof());
        let mut kd = Vec::with_capacity(self.dof());
        for &j in &self.armature {
            let (p, d) = derive_gains(j, natural_freq, damping_ratio)?;
            kp.push(p);
            kd.push(d);
        }
        self.natural_freq = natural_freq;
        self.damping_ratio = damping_ratio;
        self.kp = kp;
        self.kd = kd;
        Ok(self)
    }

    /// The six-joint planar biped used throughout the harness: torso (anchor),
    /// head, two legs of thigh + shin, two single-link arms.
    pub fn toy_biped() -> Self {
        let l = |v: f64| T::lit(v);
        let p = |x: f64, z: f64| [l(x), T::zero(), l(z)];
        let body = |name: &str, parent, joint, pivot, tip, mass: f64| BodySpec {
            name: name.to_string(),
            parent,
            joint,
            pivot,
            tip,
            mass: l(mass),
        };
        let bodies = vec![
            body("torso", None, None, p(0.0, 0.0), p(0.0, 0.0), 1.5),
            body("head", Some(0), None, p(0.0, 0.0), p(0.0, 0.25), 0.3),
            body("left_knee", Some(0), Some(0), p(0.0, -0.1), p(0.0, -0.2), 0.3),
            body("left_ankle", Some(2), Some(1), p(0.0, 0.0), p(0.0, -0.2), 0.2),
            body("right_knee", Some(0), Some(2), p(0.0, -0.1), p(0.0, -0.2), 0.3),
            body("right_ankle", Some(4), Some(3), p(0.0, 0.0), p(0.0, -0.2), 0.2),
            body("left_hand", Some(0), Some(4), p(0.0, 0.15), p(0.0, -0.2), 0.15),
            body("right_hand", Some(0), Some(5), p(0.0, 0.15), p(0.0, -0.2), 0.15),
        ];
        let names = ["left_hip", "left_knee", "right_hip", "right_knee", "left_shoulder", "right_shoulder"];
        let v = |a: [f64; 6]| a.iter().map(|&x| l(x)).collect::<Vec<T>>();
        let model = RobotModel {
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            q_min: v([-1.2, -0.1, -1.2, -1.6, -2.0, -2.0]),
            q_max: v([1.2, 1.6, 1.2, 0.1, 2.0, 2.0]),
            q_default: v([-0.35, 0.2, 0.35, -0.2, 0.2, -0.2]),
            effort_limit: v([100.0, 50.0, 100.0, 50.0, 40.0, 40.0]),
            velocity_limit: v([20.0; 6]),
            armature: v([0.05, 0.02, 0.05, 0.02, 0.02, 0.02]),
            natural_freq: T::zero(),
            damping_ratio: T::zero(),
            kp: Vec::new(),
            kd: Vec::new(),
            bodies,
            anchor: 0,
            head: 1,
            feet: vec![3, 5],
            hands: vec![6, 7],
            upper: vec![0, 1, 6, 7],
            lower: vec![2, 3, 4, 5],
            base_inertia: l(0.08),
        };
        model
            .with_gains(T::lit(2.0 * std::f64::consts::PI * 10.0), T::lit(2.0))
            .expect("positive toy parameters")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_gains_follow_closed_form() {
        let m = RobotModel::<f64>::toy_biped();
        let wn = 2.0 * std::f64::consts::PI * 10.0;
        for j in 0..m.dof() {
            assert_eq!(m.kp[j], m.armature[j] * wn * wn);
            assert_eq!(m.kd[j], 2.0 * 2.0 * m.armature[j] * wn);
            assert!(m.q_min[j] < m.q_default[j] && m.q_default[j] < m.q_max[j]);
        }
        assert_eq!(m.body_set(BodySet::Vr), vec![1, 6, 7]);
        assert_eq!(m.body_set(BodySet::ContactAllowed), vec![3, 5, 6, 7]);
    }
}
