//! Simulation, learning and evaluation stack for reinforcement-learning-based
//! multi-perspective visual servoing of a six-joint arm with an eye-in-hand
//! depth camera.

pub mod autoencoder;
pub mod config;
pub mod dvs;
pub mod env;
pub mod error;
pub mod eval;
pub mod kinematics;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod scene;
pub mod toy;

pub use error::{Error, Result};
