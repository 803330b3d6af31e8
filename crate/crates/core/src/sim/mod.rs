//! Toy articulated tracking environment: robot model, PD control, planar
//! dynamics, terminations, randomization and evaluation.

pub mod control;
pub mod demo;
pub mod env;
pub mod evaluate;
pub mod kinematics;
mod model;

pub use control::{action_scale, action_to_target, derive_gains, pd_torque, ControlError, PdOutput};
pub use env::{EnvConfig, EnvError, RandomizationConfig, StepObs, StepResult, Termination, ToyEnv};
pub use evaluate::{evaluate, evaluate_clips, EpisodeInfo, Metrics, OraclePolicy, Policy, PolicyAction};
pub use model::{BodySet, BodySpec, RobotModel};
