//! Simulation and optimization toolkit for mobile AIGC service provisioning.
//!
//! The crate models an edge server that generates images for several mobile
//! users, picks a prompt-engineering strategy per request, and splits inference
//! trials and transmission power between users:
//!
//! - [`channel`]: Nakagami-m fading, path loss with log-normal shadowing, BER.
//! - [`genmodel`]: strategy catalog, synthetic quality oracle, demonstrations.
//! - [`imitation`]: adversarial imitation of the expert strategy policy.
//! - [`provision`]: QoE/cost objective, environment, brute-force oracle.
//! - [`d3pg`]: DDPG with a denoising-diffusion actor.
//! - [`harness`]: configuration, service-round analysis, experiment runner.

pub mod approx;
pub mod channel;
pub mod d3pg;
pub mod error;
pub mod genmodel;
pub mod harness;
pub mod imitation;
pub mod numerics;
pub mod provision;
pub mod rng;

pub use error::{Error, Result};
