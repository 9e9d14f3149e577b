//! Balanced one-shot neural architecture search.
//!
//! A weight-sharing supernet over a small cell search space is trained by
//! sampling one candidate per step, either uniformly or in proportion to the
//! candidate's parameter count. A sequence surrogate (encoder, predictor,
//! decoder) proposes new candidates by gradient ascent in latent space, and
//! a ranking laboratory compares one-shot scores against stand-alone
//! training.

pub mod archspace;
pub mod driver;
pub mod error;
pub mod network;
pub mod numerics;
pub mod metrics;
pub mod naocore;
pub mod sampler;
pub mod standalone;
pub mod supernet;
pub mod taskgen;

pub use error::{Error, Result};

/// Deterministic RNG used throughout.
pub type SeededRng = rand_chacha::ChaCha8Rng;
