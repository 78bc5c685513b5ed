//! Domain-randomized recurrent PPO on a toy in-hand reorientation task.
//!
//! The environment ([`env`]) and its perturbations ([`randomization`]) run in
//! `f64`. The learning stack ([`nets`], [`ppo`]) is generic over [`Real`];
//! training uses the `f32` aliases exported here.

pub mod calibration;
pub mod env;
pub mod error;
pub mod nets;
pub mod ppo;
pub mod randomization;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Scalar used for training and inference.
pub type Scalar = f32;
pub type Net = nets::Network<Scalar>;
pub type PpoLearner = ppo::Learner<Scalar>;
pub type EnvRollout = ppo::rollout::Rollout<Scalar>;
