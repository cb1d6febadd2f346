//! Desk-scale traffic signal control lab: a point-queue intersection
//! simulator, a token-emitting policy trained with clipped PPO, hurdle and
//! semantic-entropy reward shaping, and reference controllers.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod language;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod sim;

pub use error::{Error, Result};
