//! Unit quaternions in scalar-first (w, x, y, z) order and the handful of
//! rotation utilities the reward, env and FLD code needs.

use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Allowed deviation of `|q|` from 1 before a quaternion is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("quaternion norm {norm} deviates from 1 by more than {UNIT_TOLERANCE}")]
pub struct NonUnitQuaternion {
    pub norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Default for Quat<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Quat<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: [T; 3], angle: T) -> Self {
        let half = angle / T::lit(2.0);
        let s = half.sin();
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Rotation about the world y axis (the toy chain's only rotation axis).
    pub fn from_pitch(angle: T) -> Self {
        Self::from_axis_angle([T::zero(), T::one(), T::zero()], angle)
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn check_unit(self) -> Result<Self, NonUnitQuaternion> {
        let n = self.norm().as_f64();
        if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
            Err(NonUnitQuaternion { norm: n })
        } else {
            Ok(self)
        }
    }

    pub fn rotate(self, v: [T; 3]) -> [T; 3] {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = [self.x, self.y, self.z];
        let two = T::lit(2.0);
        let t = cross(u, v).map(|c| c * two);
        let ut = cross(u, t);
        [
            v[0] + self.w * t[0] + ut[0],
            v[1] + self.w * t[1] + ut[1],
            v[2] + self.w * t[2] + ut[2],
        ]
    }

    pub fn inverse_rotate(self, v: [T; 3]) -> [T; 3] {
        self.conjugate().rotate(v)
    }

    /// First two columns of the rotation matrix, row-major flattened.
    pub fn to_rot6(self) -> [T; 6] {
        let one = T::one();
        let zero = T::zero();
        let c0 = self.rotate([one, zero, zero]);
        let c1 = self.rotate([zero, one, zero]);
        [c0[0], c1[0], c0[1], c1[1], c0[2], c1[2]]
    }

    /// Geodesic angle to `other` in `[0, pi]`; `q` and `-q` are the same rotation.
    /// Equal to `2 acos(|<q1, q2>|)` for unit inputs, evaluated through the
    /// relative rotation so identical inputs give exactly zero.
    pub fn angle_to(self, other: Self) -> T {
        let (a, b) = (self, other);
        // Vector part of conj(a) * b, grouped so equal or antipodal inputs cancel exactly.
        let vx = (a.w * b.x - b.w * a.x) + (a.z * b.y - a.y * b.z);
        let vy = (a.w * b.y - b.w * a.y) + (a.x * b.z - a.z * b.x);
        let vz = (a.w * b.z - b.w * a.z) + (a.y * b.x - a.x * b.y);
        let v = (vx * vx + vy * vy + vz * vz).sqrt();
        T::lit(2.0) * v.atan2(a.dot(b).abs())
    }
}

impl<T: Real> Mul for Quat<T> {
    type Output = Self;

    fn mul(self, r: Self) -> Self {
        let l = self;
        Self::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

pub fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Geodesic distance between two unit quaternions:
/// `2 * acos(min(1, |<q1, q2>|))`, always in `[0, pi]`.
pub fn quat_distance<T: Real>(q1: Quat<T>, q2: Quat<T>) -> Result<T, NonUnitQuaternion> {
    q1.check_unit()?;
    q2.check_unit()?;
    Ok(q1.angle_to(q2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit(a: [f64; 4]) -> Quat<f64> {
        Quat::from_array(a).normalized()
    }

    #[test]
    fn identical_and_antipodal_are_zero() {
        let q = unit([0.3, -0.2, 0.9, 0.1]);
        assert_eq!(quat_distance(q, q).unwrap(), 0.0);
        assert_eq!(quat_distance(q, q.neg()).unwrap(), 0.0);
    }

    #[test]
    fn quarter_turn_about_z() {
        let z90 = Quat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let d = quat_distance(Quat::identity(), z90).unwrap();
        assert!((d - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_unit() {
        let err = quat_distance(Quat::new(2.0, 0.0, 0.0, 0.0), Quat::identity()).unwrap_err();
        assert_eq!(err.norm, 2.0);
    }

    #[test]
    fn rotate_matches_pitch_convention() {
        // +90 deg about y sends +z to +x.
        let q = Quat::from_pitch(FRAC_PI_2);
        let v = q.rotate([0.0, 0.0, 1.0]);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let q = Quat::<f32>::from_axis_angle([0.0, 0.0, 1.0], std::f32::consts::FRAC_PI_2);
        let d = quat_distance(Quat::identity(), q).unwrap();
        assert!((d - std::f32::consts::FRAC_PI_2).abs() < 1e-5);
    }

    fn arb_quat() -> impl Strategy<Value = Quat<f64>> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
            .prop_map(unit)
    }

    proptest! {
        #[test]
        fn metric_axioms(a in arb_quat(), b in arb_quat(), c in arb_quat()) {
            let ab = quat_distance(a, b).unwrap();
            let ba = quat_distance(b, a).unwrap();
            let bc = quat_distance(b, c).unwrap();
            let ac = quat_distance(a, c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&ab));
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn distance_is_rotation_angle_of_relative(a in arb_quat(), b in arb_quat()) {
            let rel = a.conjugate() * b;
            let d = quat_distance(a, b).unwrap();
            prop_assert!((rel.angle_to(Quat::identity()) - d).abs() < 1e-6);
        }
    }
}
