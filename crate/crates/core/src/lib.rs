//! Core library: benign-domain corpus handling, classic DGA families,
//! an autoencoder-seeded character-level GAN with three adversarial
//! objectives, domain sampling and collision analytics, DNS liveness
//! auditing, and a trainable DGA classifier zoo.

pub mod analytics;
pub mod autoencoder;
pub mod checkpoint;
pub mod classic;
pub mod corpus;
pub mod error;
pub mod gan;
pub mod liveness;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod synth;
pub mod zoo;

pub use error::{Error, Result};
