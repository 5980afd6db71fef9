//! Trust-aware, pre-migration-enabled task migration for vehicular digital
//! twins, with a diffusion-policy actor-critic learner.

pub mod attack;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod oracle;
pub mod trainer;
pub mod trust;
pub mod world;

pub use config::{Config, Profile};
pub use error::{Error, Result};
