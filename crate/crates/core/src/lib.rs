//! Latent-context soft actor-critic.
//!
//! A recurrent context encoder trained with a contrastive (InfoNCE)
//! next-transition objective feeds a context vector into a soft
//! actor-critic learner. Everything runs on a small reverse-mode autodiff
//! tape over `f64` tensors.

pub mod autodiff;
pub mod codec;
pub mod config;
pub mod encoder;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod params;
pub mod plot;
pub mod replay;
pub mod sac;
pub mod stats;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
