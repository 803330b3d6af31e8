pub mod motion_bank;
pub mod quat;
pub mod scalar;
pub mod curriculum;
pub mod reward;
pub mod sim;
pub mod teleop;
pub mod policy;
pub mod fld;

pub use scalar::Real;

pub type Quatd = quat::Quat<f64>;
pub type Quatf = quat::Quat<f32>;
pub type FrameStated = reward::FrameState<f64>;
pub type RobotModeld = sim::RobotModel<f64>;
pub type PolicyNetd = policy::nn::PolicyNet<f64>;
pub type FldModeld = fld::FldModel<f64>;
