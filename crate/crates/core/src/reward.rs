//! Tracking rewards and regularization penalties.
//!
//! Every tracking term uses the kernel `exp(-err / std^2)` where `err` is a
//! squared distance (averaged over a body set); penalties are raw magnitudes
//! carrying negative weights.

use serde::{Deserialize, Serialize};

use crate::quat::{NonUnitQuaternion, Quat};
use crate::scalar::{dist_sq, Real};
use crate::sim::{BodySet, RobotModel};

pub const DEFAULT_REWARDS_TOML: &str = include_str!("../assets/rewards_default.toml");

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    NonUnitQuaternion(#[from] NonUnitQuaternion),
    #[error("invalid reward spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermId {
    AnchorPos,
    AnchorOri,
    BodyPos,
    BodyOri,
    BodyLinVel,
    BodyAngVel,
    AnchorLinVel,
    GlobalBodyPos,
    GlobalVr,
    GlobalFeetPos,
    GlobalBodyOri,
    GlobalBodyAngVel,
    GlobalBodyLinVel,
    UndesiredContacts,
    ActionRate,
    JointLimit,
    JointAcc,
    JointTorque,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Tracking,
    Teleop,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    World,
    Anchor,
}

/// What error a term measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Measure {
    Position,
    Orientation,
    LinVel,
    AngVel,
    SplitPosition,
    Contacts,
    ActionRate,
    JointLimit,
    JointAcc,
    JointTorque,
}

impl TermId {
    fn measure(self) -> Measure {
        use TermId::*;
        match self {
            AnchorPos | BodyPos | GlobalVr | GlobalFeetPos => Measure::Position,
            AnchorOri | BodyOri | GlobalBodyOri => Measure::Orientation,
            BodyLinVel | AnchorLinVel | GlobalBodyLinVel => Measure::LinVel,
            BodyAngVel | GlobalBodyAngVel => Measure::AngVel,
            GlobalBodyPos => Measure::SplitPosition,
            UndesiredContacts => Measure::Contacts,
            ActionRate => Measure::ActionRate,
            JointLimit => Measure::JointLimit,
            JointAcc => Measure::JointAcc,
            JointTorque => Measure::JointTorque,
        }
    }

    fn expected_kind(self) -> TermKind {
        use TermId::*;
        match self {
            AnchorPos | AnchorOri | BodyPos | BodyOri | BodyLinVel | BodyAngVel | AnchorLinVel => TermKind::Tracking,
            GlobalBodyPos | GlobalVr | GlobalFeetPos | GlobalBodyOri | GlobalBodyAngVel | GlobalBodyLinVel => {
                TermKind::Teleop
            }
            _ => TermKind::Penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTerm {
    pub id: TermId,
    pub kind: TermKind,
    pub weight: f64,
    #[serde(default)]
    pub std: Option<f64>,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default)]
    pub body_set: Option<BodySet>,
    /// Contact force magnitude counted as a contact (N).
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub upper_weight: Option<f64>,
    #[serde(default)]
    pub lower_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    #[serde(rename = "term")]
    pub terms: Vec<RewardTerm>,
}

impl RewardSpec {
    pub fn from_toml(src: &str) -> Result<Self, RewardError> {
        let spec: RewardSpec = toml::from_str(src).map_err(|e| RewardError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reward spec serializes")
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        for t in &self.terms {
            let bad = |m: String| Err(RewardError::InvalidSpec(format!("{:?}: {m}", t.id)));
            if t.kind != t.id.expected_kind() {
                return bad(format!("kind {:?} does not match the term", t.kind));
            }
            match t.kind {
                TermKind::Penalty => {
                    if !(t.weight < 0.0) {
                        return bad("penalty weight must be negative".into());
                    }
                }
                _ => match t.std {
                    Some(s) if s > 0.0 => {}
                    _ => return bad("kernel terms need std > 0".into()),
                },
            }
        }
        Ok(())
    }

    pub fn positive_weight_sum(&self) -> f64 {
        self.terms.iter().filter(|t| t.weight > 0.0).map(|t| t.weight).sum()
    }
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self::from_toml(DEFAULT_REWARDS_TOML).expect("shipped reward spec is valid")
    }
}

/// Snapshot of robot (or reference) state used for reward evaluation.
/// Body arrays are world frame; the anchor is `model.anchor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState<T> {
    pub joint_pos: Vec<T>,
    pub joint_vel: Vec<T>,
    pub joint_acc: Vec<T>,
    pub joint_torque: Vec<T>,
    pub body_pos: Vec<[T; 3]>,
    pub body_quat: Vec<Quat<T>>,
    pub body_lin_vel: Vec<[T; 3]>,
    pub body_ang_vel: Vec<[T; 3]>,
    pub contact_forces: Vec<[T; 3]>,
    pub action: Vec<T>,
    pub last_action: Vec<T>,
}

impl<T: Real> FrameState<T> {
    pub fn zeros(dof: usize, bodies: usize) -> Self {
        let z3 = [T::zero(); 3];
        Self {
            joint_pos: vec![T::zero(); dof],
            joint_vel: vec![T::zero(); dof],
            joint_acc: vec![T::zero(); dof],
            joint_torque: vec![T::zero(); dof],
            body_pos: vec![z3; bodies],
            body_quat: vec![Quat::identity(); bodies],
            body_lin_vel: vec![z3; bodies],
            body_ang_vel: vec![z3; bodies],
            contact_forces: vec![z3; bodies],
            action: vec![T::zero(); dof],
            last_action: vec![T::zero(); dof],
        }
    }

    pub fn check(&self, model: &RobotModel<T>) -> Result<(), RewardError> {
        let (d, b) = (model.dof(), model.body_count());
        let dims: [(&'static str, usize, usize); 11] = [
            ("joint_pos", d, self.joint_pos.len()),
            ("joint_vel", d, self.joint_vel.len()),
            ("joint_acc", d, self.joint_acc.len()),
            ("joint_torque", d, self.joint_torque.len()),
            ("action", d, self.action.len()),
            ("last_action", d, self.last_action.len()),
            ("body_pos", b, self.body_pos.len()),
            ("body_quat", b, self.body_quat.len()),
            ("body_lin_vel", b, self.body_lin_vel.len()),
            ("body_ang_vel", b, self.body_ang_vel.len()),
            ("contact_forces", b, self.contact_forces.len()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(RewardError::DimensionMismatch { what, expected, found });
            }
        }
        for q in &self.body_quat {
            q.check_unit()?;
        }
        Ok(())
    }

    /// Body position expressed in this state's anchor frame.
    pub fn anchor_relative_pos(&self, anchor: usize, b: usize) -> [T; 3] {
        let pa = self.body_pos[anchor];
        let p = self.body_pos[b];
        self.body_quat[anchor].inverse_rotate([p[0] - pa[0], p[1] - pa[1], p[2] - pa[2]])
    }

    pub fn anchor_relative_quat(&self, anchor: usize, b: usize) -> Quat<T> {
        self.body_quat[anchor].conjugate() * self.body_quat[b]
    }

    fn vec_in_frame(&self, v: [T; 3], frame: Frame, anchor: usize) -> [T; 3] {
        match frame {
            Frame::World => v,
            Frame::Anchor => self.body_quat[anchor].inverse_rotate(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermValue {
    pub id: TermId,
    /// Raw term value: kernel output in [0, 1], or the penalty magnitude.
    pub value: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub terms: Vec<TermValue>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn get(&self, id: TermId) -> Option<&TermValue> {
        self.terms.iter().find(|t| t.id == id)
    }
}

/// `exp(-err_sq / std^2)`.
#[inline]
pub fn exp_kernel<T: Real>(err_sq: T, std: T) -> T {
    (-err_sq / (std * std)).exp()
}

fn mean<T: Real>(values: impl Iterator<Item = T>) -> T {
    let mut n = 0usize;
    let mut s = T::zero();
    for v in values {
        s = s + v;
        n += 1;
    }
    if n == 0 {
        T::zero()
    } else {
        s / T::lit(n as f64)
    }
}

struct Pair<'a, T> {
    robot: &'a FrameState<T>,
    reference: &'a FrameState<T>,
    anchor: usize,
}

impl<T: Real> Pair<'_, T> {
    fn pos_err(&self, bodies: &[usize], frame: Frame) -> T {
        mean(bodies.iter().map(|&b| match frame {
            Frame::World => dist_sq(&self.robot.body_pos[b], &self.reference.body_pos[b]),
            Frame::Anchor => dist_sq(
                &self.robot.anchor_relative_pos(self.anchor, b),
                &self.reference.anchor_relative_pos(self.anchor, b),
            ),
        }))
    }

    fn ori_err(&self, bodies: &[usize], frame: Frame) -> T {
        mean(bodies.iter().map(|&b| {
            let d = match frame {
                Frame::World => self.robot.body_quat[b].angle_to(self.reference.body_quat[b]),
                Frame::Anchor => self
                    .robot
                    .anchor_relative_quat(self.anchor, b)
                    .angle_to(self.reference.anchor_relative_quat(self.anchor, b)),
            };
            d * d
        }))
    }

    fn vel_err(&self, bodies: &[usize], frame: Frame, angular: bool) -> T {
        mean(bodies.iter().map(|&b| {
            let (vr, vg) = if angular {
                (self.robot.body_ang_vel[b], self.reference.body_ang_vel[b])
            } else {
                (self.robot.body_lin_vel[b], self.reference.body_lin_vel[b])
            };
            dist_sq(
                &self.robot.vec_in_frame(vr, frame, self.anchor),
                &self.reference.vec_in_frame(vg, frame, self.anchor),
            )
        }))
    }
}

/// Evaluates every term of `spec` for a robot/reference pair.
pub fn compute_rewards<T: Real>(
    robot: &FrameState<T>,
    reference: &FrameState<T>,
    spec: &RewardSpec,
    model: &RobotModel<T>,
) -> Result<RewardBreakdown, RewardError> {
    robot.check(model)?;
    reference.check(model)?;
    let pair = Pair { robot, reference, anchor: model.anchor };
    let mut terms = Vec::with_capacity(spec.terms.len());
    let mut total = 0.0;
    for term in &spec.terms {
        let std = T::lit(term.std.unwrap_or(1.0));
        let set = |default| model.body_set(term.body_set.unwrap_or(default));
        let value: T = match term.id.measure() {
            Measure::Position => exp_kernel(pair.pos_err(&set(BodySet::All), term.frame), std),
            Measure::Orientation => exp_kernel(pair.ori_err(&set(BodySet::All), term.frame), std),
            Measure::LinVel => exp_kernel(pair.vel_err(&set(BodySet::All), term.frame, false), std),
            Measure::AngVel => exp_kernel(pair.vel_err(&set(BodySet::All), term.frame, true), std),
            Measure::SplitPosition => {
                let wu = T::lit(term.upper_weight.unwrap_or(0.5));
                let wl = T::lit(term.lower_weight.unwrap_or(0.5));
                let eu = pair.pos_err(&model.body_set(BodySet::Upper), term.frame);
                let el = pair.pos_err(&model.body_set(BodySet::Lower), term.frame);
                wu * exp_kernel(eu, std) + wl * exp_kernel(el, std)
            }
            Measure::Contacts => {
                let allowed = set(BodySet::ContactAllowed);
                let thr = T::lit(term.threshold.unwrap_or(1.0));
                let count = (0..model.body_count())
                    .filter(|b| !allowed.contains(b))
                    .filter(|&b| crate::scalar::norm_sq(&robot.contact_forces[b]).sqrt() > thr)
                    .count();
                T::lit(count as f64)
            }
            Measure::ActionRate => dist_sq(&robot.action, &robot.last_action),
            Measure::JointLimit => {
                let count = (0..model.dof())
                    .filter(|&j| {
                        let q = robot.joint_pos[j];
                        q < model.q_min[j] || q > model.q_max[j]
                    })
                    .count();
                T::lit(count as f64)
            }
            Measure::JointAcc => crate::scalar::norm_sq(&robot.joint_acc),
            Measure::JointTorque => crate::scalar::norm_sq(&robot.joint_torque),
        };
        let value = value.as_f64();
        let weighted = term.weight * value;
        total += weighted;
        terms.push(TermValue { id: term.id, value, weighted });
    }
    Ok(RewardBreakdown { terms, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> RobotModel<f64> {
        RobotModel::toy_biped()
    }

    fn random_state(rng: &mut ChaCha8Rng, m: &RobotModel<f64>) -> FrameState<f64> {
        let mut s = FrameState::zeros(m.dof(), m.body_count());
        let v3 = |rng: &mut ChaCha8Rng, k: f64| [rng.random_range(-k..k), rng.random_range(-k..k), rng.random_range(-k..k)];
        for b in 0..m.body_count() {
            s.body_pos[b] = v3(rng, 1.0);
            s.body_lin_vel[b] = v3(rng, 1.0);
            s.body_ang_vel[b] = v3(rng, 3.0);
            let a: [f64; 4] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            s.body_quat[b] = Quat::from_array(a).normalized();
        }
        for j in 0..m.dof() {
            s.joint_pos[j] = rng.random_range(m.q_min[j]..m.q_max[j]);
        }
        s
    }

    #[test]
    fn kernel_values() {
        assert_eq!(exp_kernel(0.0, 0.3), 1.0);
        assert!((exp_kernel(0.09f64, 0.3) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(exp_kernel(0.1, 0.3) > exp_kernel(0.2, 0.3));
    }

    #[test]
    fn default_spec_shape() {
        let spec = RewardSpec::default();
        assert_eq!(spec.terms.len(), 18);
        assert_eq!(spec.positive_weight_sum(), 11.0);
        let back = RewardSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn spec_validation() {
        let mut spec = RewardSpec::default();
        spec.terms[14].weight = 0.1;
        assert!(spec.validate().is_err());
        let mut spec = RewardSpec::default();
        spec.terms[0].std = Some(0.0);
        assert!(spec.validate().is_err());
        assert!(RewardSpec::from_toml("[[term]]\nid = \"anchor_pos\"\nkind = \"tracking\"\nweight = 1.0\nstd = 1.0\nbogus = 1").is_err());
    }

    #[test]
    fn perfect_tracking_sums_positive_weights() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng, &m);
        let r = compute_rewards(&s, &s, &RewardSpec::default(), &m).unwrap();
        assert_eq!(r.total, 11.0);
        for t in &r.terms {
            if t.weighted > 0.0 {
                assert_eq!(t.value, 1.0, "{:?}", t.id);
            } else {
                assert_eq!(t.value, 0.0, "{:?}", t.id);
            }
        }
    }

    #[test]
    fn penalties_count_indicators() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference = random_state(&mut rng, &m);
        let mut robot = reference.clone();
        robot.contact_forces[1] = [0.0, 0.0, 2.0]; // head, not allowed
        robot.contact_forces[3] = [0.0, 0.0, 50.0]; // foot, allowed
        robot.joint_pos[3] = m.q_max[3] + 0.1;
        let r = compute_rewards(&robot, &reference, &RewardSpec::default(), &m).unwrap();
        let contacts = r.get(TermId::UndesiredContacts).unwrap();
        assert_eq!((contacts.value, contacts.weighted), (1.0, -0.05));
        assert_eq!(r.get(TermId::JointLimit).unwrap().weighted, -10.0);
    }

    #[test]
    fn dimension_mismatch() {
        let m = model();
        let s = FrameState::zeros(m.dof(), m.body_count());
        let mut bad = s.clone();
        bad.joint_pos.pop();
        assert!(matches!(
            compute_rewards(&bad, &s, &RewardSpec::default(), &m),
            Err(RewardError::DimensionMismatch { what: "joint_pos", .. })
        ));
    }

    fn rigid(s: &FrameState<f64>, rot: Quat<f64>, shift: [f64; 3]) -> FrameState<f64> {
        let mut out = s.clone();
        for b in 0..s.body_pos.len() {
            let p = rot.rotate(s.body_pos[b]);
            out.body_pos[b] = [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]];
            out.body_quat[b] = rot * s.body_quat[b];
            out.body_lin_vel[b] = rot.rotate(s.body_lin_vel[b]);
            out.body_ang_vel[b] = rot.rotate(s.body_ang_vel[b]);
        }
        out
    }

    proptest! {
        #[test]
        fn anchor_terms_invariant_world_terms_not(seed in any::<u64>(), angle in 0.3f64..2.5, dx in 0.5f64..2.0) {
            let m = model();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let robot = random_state(&mut rng, &m);
            let mut reference = robot.clone();
            for b in 0..m.body_count() {
                for a in 0..3 {
                    reference.body_pos[b][a] += rng.random_range(-0.05..0.05);
                }
                reference.body_quat[b] = reference.body_quat[b] * Quat::from_pitch(rng.random_range(-0.1..0.1));
            }
            let rot = Quat::from_axis_angle([0.0, 0.0, 1.0], angle);
            let spec = RewardSpec::default();
            let before = compute_rewards(&robot, &reference, &spec, &m).unwrap();
            // Transform only the robot: world terms must change.
            let moved = rigid(&robot, rot, [dx, 0.0, 0.0]);
            let after_one = compute_rewards(&moved, &reference, &spec, &m).unwrap();
            prop_assert!((before.get(TermId::GlobalFeetPos).unwrap().value - after_one.get(TermId::GlobalFeetPos).unwrap().value).abs() > 1e-9);
            // Transform both: anchor-relative terms unchanged.
            let both = compute_rewards(&moved, &rigid(&reference, rot, [dx, 0.0, 0.0]), &spec, &m).unwrap();
            for id in [TermId::BodyPos, TermId::BodyOri] {
                prop_assert!((before.get(id).unwrap().value - both.get(id).unwrap().value).abs() < 1e-9);
            }
        }

        #[test]
        fn kernel_terms_bounded_and_total_consistent(seed in any::<u64>()) {
            let m = model();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_state(&mut rng, &m);
            let b = random_state(&mut rng, &m);
            let spec = RewardSpec::default();
            let r = compute_rewards(&a, &b, &spec, &m).unwrap();
            let mut sum = 0.0;
            for (t, term) in r.terms.iter().zip(&spec.terms) {
                if term.kind != TermKind::Penalty {
                    prop_assert!((0.0..=1.0).contains(&t.value));
                }
                sum += term.weight * t.value;
            }
            prop_assert!((sum - r.total).abs() < 1e-9);
        }

        #[test]
        fn each_term_decreases_with_its_own_error(seed in any::<u64>(), step in 0.05f64..0.5) {
            let m = model();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reference = random_state(&mut rng, &m);
            let spec = RewardSpec::default();
            let base = compute_rewards(&reference, &reference, &spec, &m).unwrap();
            // Perturb one component per case and check the matching term drops.
            let cases: Vec<(TermId, Box<dyn Fn(&mut FrameState<f64>)>)> = vec![
                (TermId::GlobalFeetPos, Box::new(move |s: &mut FrameState<f64>| s.body_pos[3][2] += step)),
                (TermId::GlobalVr, Box::new(move |s: &mut FrameState<f64>| s.body_pos[6][0] += step)),
                (TermId::BodyPos, Box::new(move |s: &mut FrameState<f64>| s.body_pos[2][0] += step)),
                (TermId::BodyOri, Box::new(move |s: &mut FrameState<f64>| s.body_quat[4] = s.body_quat[4] * Quat::from_pitch(step))),
                (TermId::GlobalBodyLinVel, Box::new(move |s: &mut FrameState<f64>| s.body_lin_vel[5][1] += step)),
                (TermId::GlobalBodyAngVel, Box::new(move |s: &mut FrameState<f64>| s.body_ang_vel[5][1] += step)),
                (TermId::AnchorLinVel, Box::new(move |s: &mut FrameState<f64>| s.body_lin_vel[0][0] += step)),
                (TermId::ActionRate, Box::new(move |s: &mut FrameState<f64>| s.action[0] += step)),
                (TermId::JointTorque, Box::new(move |s: &mut FrameState<f64>| s.joint_torque[0] += step)),
                (TermId::JointAcc, Box::new(move |s: &mut FrameState<f64>| s.joint_acc[0] += step)),
            ];
            for (id, perturb) in cases {
                let mut robot = reference.clone();
                perturb(&mut robot);
                let r = compute_rewards(&robot, &reference, &spec, &m).unwrap();
                prop_assert!(r.get(id).unwrap().weighted < base.get(id).unwrap().weighted, "{:?}", id);
            }
        }
    }
}
