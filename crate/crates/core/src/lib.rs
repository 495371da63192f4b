//! MAMEX: equilibrium learning in general-sum episodic Markov games.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix it to `f64`, which is what the CLI uses.

pub mod discrepancy;
pub mod equilibrium;
pub mod evaluate;
pub mod experiment;
pub mod game;
pub mod hypothesis;
pub mod index;
pub mod linalg;
pub mod mamex;
pub mod optimize;
pub mod policy;
pub mod scalar;
pub mod testkit;

pub use scalar::Scalar;

pub type Game = game::MarkovGame<f64>;
pub type PolicySpace = policy::PurePolicySpace<f64>;
pub type MixedPolicy = policy::JointMixedPolicy<f64>;
