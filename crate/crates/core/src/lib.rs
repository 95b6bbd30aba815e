//! Bayesian network mediation: a Gibbs sampler for mediation analysis in
//! which latent block-pair connection strengths of repeated weighted
//! networks mediate the effect of an exposure on an outcome.

pub mod diagnostics;
pub mod dist;
pub mod effects;
pub mod error;
pub mod par;
pub mod sampler;
pub mod sbm;
pub mod simulate;
pub mod types;

pub use error::{BnmmError, Result};
pub use types::*;
