//! Counterfactual data augmentation for offline reinforcement learning in
//! locally factored MDPs.
//!
//! The pipeline fits per-parent-set mixture models to logged transitions,
//! samples a decorrelated state-action distribution from them, pushes those
//! samples through a masked, locally factored dynamics ensemble, relabels
//! rewards for a target task and trains an offline agent on the result.

pub mod augment;
pub mod data;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod kde;
pub mod linalg;
pub mod nets;
pub mod parent_sampler;
pub mod rl;
pub mod scalar;
pub mod seeds;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by the pipeline.
pub type Net = nets::FeedForwardNet<f64>;
pub type Gmm = gmm::GmmModel<f64>;
pub type Ensemble = dynamics::DynamicsEnsemble<f64>;
