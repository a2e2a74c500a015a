//! Octorotor flight simulation, cascaded PID control, a PPO-trained
//! supervisory policy, trajectory following and hyperparameter search.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the tuner, evaluation and CLI use.

pub mod analysis;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod policy;
pub mod ppo;
pub mod runner;
pub mod scalar;
pub mod tuner;

pub use error::{Error, Result};

pub type Vec3 = scalar::Vec3<f64>;
pub type State = dynamics::KinematicState<f64>;
pub type Vehicle = dynamics::VehicleParams<f64>;
pub type Wind = dynamics::WindField<f64>;
pub type Gains = controller::CascadeGains<f64>;
pub type EpisodeConfig = env::EpisodeConfig<f64>;
pub type Episode = env::Episode<f64>;
pub type Policy = policy::PolicyParameters<f64>;
pub type Hyperparams = ppo::RlHyperparams<f64>;
pub type Trajectory = runner::Trajectory<f64>;
