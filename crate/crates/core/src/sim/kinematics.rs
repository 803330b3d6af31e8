//! Forward kinematics and point Jacobians for the planar chain.
//!
//! Generalized coordinates are `[x, z, pitch, q_0 .. q_{J-1}]`. Every rotation
//! is about the world y axis, so a body's orientation is a single pitch angle.

use super::model::RobotModel;
use crate::quat::Quat;
use crate::reward::FrameState;
use crate::scalar::Real;

/// Index of the first joint coordinate in the generalized vector.
pub const BASE_COORDS: usize = 3;

/// World placement of every body for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement<T> {
    pub pos: Vec<[T; 3]>,
    /// Accumulated pitch of each body frame.
    pub angle: Vec<T>,
    /// World position of the point the body's joint rotates about
    /// (the base position for unjointed bodies).
    pub pivot: Vec<[T; 3]>,
}

/// Rotates `v` by `angle` about +y.
#[inline]
pub fn rot_y<T: Real>(angle: T, v: [T; 3]) -> [T; 3] {
    let (s, c) = angle.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

#[inline]
fn add<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// `y × r` for the rotation axis y.
#[inline]
pub fn y_cross<T: Real>(r: [T; 3]) -> [T; 3] {
    [r[2], T::zero(), -r[0]]
}

/// Base pitch encoded by a quaternion that rotates about y.
pub fn pitch_of<T: Real>(q: Quat<T>) -> T {
    T::lit(2.0) * q.y.atan2(q.w)
}

pub fn forward_kinematics<T: Real>(model: &RobotModel<T>, base: [T; 3], q: &[T]) -> Placement<T> {
    let n = model.body_count();
    let origin = [base[0], T::zero(), base[1]];
    let mut pos = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    let mut pivot = Vec::with_capacity(n);
    for body in &model.bodies {
        let (p_parent, a_parent) = match body.parent {
            Some(p) => (pos[p], angle[p]),
            None => (origin, base[2]),
        };
        let hinge = add(p_parent, rot_y(a_parent, body.pivot));
        let a = a_parent + body.joint.map_or(T::zero(), |j| q[j]);
        pos.push(add(hinge, rot_y(a, body.tip)));
        angle.push(a);
        pivot.push(if body.joint.is_some() { hinge } else { origin });
    }
    Placement { pos, angle, pivot }
}

/// Calls `f(coord, column)` for every generalized coordinate that moves a
/// point `p` rigidly attached to `body`; `column` is `d p / d coord`.
pub fn for_each_column<T: Real>(
    model: &RobotModel<T>,
    place: &Placement<T>,
    body: usize,
    p: [T; 3],
    mut f: impl FnMut(usize, [T; 3]),
) {
    let (o, z) = (T::one(), T::zero());
    f(0, [o, z, z]);
    f(1, [z, z, o]);
    let base = place.pos[model.anchor];
    f(2, y_cross([p[0] - base[0], z, p[2] - base[2]]));
    let mut b = Some(body);
    while let Some(i) = b {
        if let Some(j) = model.bodies[i].joint {
            let h = place.pivot[i];
            f(BASE_COORDS + j, y_cross([p[0] - h[0], z, p[2] - h[2]]));
        }
        b = model.bodies[i].parent;
    }
}

/// Velocity of a point rigidly attached to `body` given generalized velocity `gd`.
pub fn point_velocity<T: Real>(model: &RobotModel<T>, place: &Placement<T>, body: usize, p: [T; 3], gd: &[T]) -> [T; 3] {
    let mut v = [T::zero(); 3];
    for_each_column(model, place, body, p, |k, c| {
        for a in 0..3 {
            v[a] = v[a] + c[a] * gd[k];
        }
    });
    v
}

/// Adds `J^T f` for a point force `f` applied at `p` on `body`.
pub fn apply_point_force<T: Real>(
    model: &RobotModel<T>,
    place: &Placement<T>,
    body: usize,
    p: [T; 3],
    f: [T; 3],
    gen_force: &mut [T],
) {
    for_each_column(model, place, body, p, |k, c| {
        gen_force[k] = gen_force[k] + c[0] * f[0] + c[1] * f[1] + c[2] * f[2];
    });
}

/// `sum_k (d p / d coord_k)^2 / m_k`: inverse effective mass of a point along
/// each world axis, under the diagonal generalized mass matrix.
pub fn inverse_point_mass<T: Real>(model: &RobotModel<T>, place: &Placement<T>, body: usize, p: [T; 3], inv_mass: &[T]) -> [T; 3] {
    let mut w = [T::zero(); 3];
    for_each_column(model, place, body, p, |k, c| {
        for a in 0..3 {
            w[a] = w[a] + c[a] * c[a] * inv_mass[k];
        }
    });
    w
}

/// Pitch rate of every body frame.
pub fn body_pitch_rates<T: Real>(model: &RobotModel<T>, gd: &[T]) -> Vec<T> {
    let mut rates: Vec<T> = Vec::with_capacity(model.body_count());
    for body in &model.bodies {
        let parent = body.parent.map_or(gd[2], |p| rates[p]);
        rates.push(parent + body.joint.map_or(T::zero(), |j| gd[BASE_COORDS + j]));
    }
    rates
}

/// Kinematic state of every body for configuration `g` and velocity `gd`.
/// Dynamic quantities (torque, acceleration, contacts, actions) are zero.
pub fn frame_state<T: Real>(model: &RobotModel<T>, g: &[T], gd: &[T]) -> FrameState<T> {
    let dof = model.dof();
    let place = forward_kinematics(model, [g[0], g[1], g[2]], &g[BASE_COORDS..]);
    let rates = body_pitch_rates(model, gd);
    let mut s = FrameState::zeros(dof, model.body_count());
    s.joint_pos.copy_from_slice(&g[BASE_COORDS..]);
    s.joint_vel.copy_from_slice(&gd[BASE_COORDS..]);
    for b in 0..model.body_count() {
        s.body_pos[b] = place.pos[b];
        s.body_quat[b] = Quat::from_pitch(place.angle[b]);
        s.body_lin_vel[b] = point_velocity(model, &place, b, place.pos[b], gd);
        s.body_ang_vel[b] = [T::zero(), rates[b], T::zero()];
    }
    s
}
