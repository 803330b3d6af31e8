pub mod adapt;
pub mod agent;
pub mod checkpoint;
pub mod nn;
pub mod obs;
pub mod ppo;
pub mod residual;
