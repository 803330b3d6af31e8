//! Joint-space PD control with effort saturation, gain derivation from a
//! second-order target response, and action scaling.

use super::model::RobotModel;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("expected {expected} joints, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// `Kp = J wn^2`, `Kd = 2 zeta J wn`.
pub fn derive_gains<T: Real>(armature: T, natural_freq: T, damping_ratio: T) -> Result<(T, T), ControlError> {
    for (name, v) in [("armature", armature), ("natural_freq", natural_freq), ("damping_ratio", damping_ratio)] {
        if !(v > T::zero()) || !v.is_finite() {
            return Err(ControlError::NonPositiveParam { name, value: v.as_f64() });
        }
    }
    let kp = armature * natural_freq * natural_freq;
    let kd = T::lit(2.0) * damping_ratio * armature * natural_freq;
    Ok((kp, kd))
}

/// Saturated PD output plus a per-joint flag marking clamped joints.
#[derive(Debug, Clone, PartialEq)]
pub struct PdOutput<T> {
    pub torque: Vec<T>,
    pub saturated: Vec<bool>,
}

/// `tau = Kp (q_des - q) + Kd (qd_des - qd)`, clamped to `±tau_max`.
pub fn pd_torque<T: Real>(
    q_des: &[T],
    q: &[T],
    qd_des: &[T],
    qd: &[T],
    model: &RobotModel<T>,
) -> Result<PdOutput<T>, ControlError> {
    let n = model.dof();
    for len in [q_des.len(), q.len(), qd_des.len(), qd.len()] {
        if len != n {
            return Err(ControlError::DimensionMismatch { expected: n, found: len });
        }
    }
    let mut torque = Vec::with_capacity(n);
    let mut saturated = Vec::with_capacity(n);
    for j in 0..n {
        let raw = model.kp[j] * (q_des[j] - q[j]) + model.kd[j] * (qd_des[j] - qd[j]);
        let lim = model.effort_limit[j];
        let clamped = raw.max(-lim).min(lim);
        saturated.push(clamped != raw);
        torque.push(clamped);
    }
    Ok(PdOutput { torque, saturated })
}

/// Per-joint action scale `0.25 tau_max / Kp`.
pub fn action_scale<T: Real>(model: &RobotModel<T>) -> Vec<T> {
    model
        .effort_limit
        .iter()
        .zip(&model.kp)
        .map(|(&tau, &kp)| T::lit(0.25) * tau / kp)
        .collect()
}

/// `q_des = q_default + action * dq_max`.
pub fn action_to_target<T: Real>(action: &[T], q_default: &[T], model: &RobotModel<T>) -> Result<Vec<T>, ControlError> {
    let n = model.dof();
    if action.len() != n || q_default.len() != n {
        return Err(ControlError::DimensionMismatch { expected: n, found: action.len().min(q_default.len()) });
    }
    Ok(action_scale(model)
        .into_iter()
        .zip(action.iter().zip(q_default))
        .map(|(s, (&a, &q0))| q0 + a * s)
        .collect())
}
