//! Adaptive mapping of a subject's 2D visual-attention field.
//!
//! Search times measured at a finite set of spawn points in the field of
//! view are modelled with Gaussian-process regression. An active learner
//! chooses where to place the next stimulus, the trained model is rendered
//! as mean / two-sigma heatmaps, and the level set of the posterior mean is
//! used to schedule treatment cues near the neglect border. Head and eye
//! traces are reduced to search-area-middle metrics.

pub mod active_learning;
pub mod assessment;
pub mod benchmark;
pub mod domain;
pub mod gp;
pub mod heatmap;
pub mod metrics;
pub mod rng;
pub mod store;
pub mod subject_sim;
pub mod treatment;

pub use active_learning::{AcquisitionResult, InitStrategy, StopRule};

pub use domain::{FovPoint, Measurement, SceneId, SessionConfig, SpawnPoint};
pub use gp::{GpModel, Hyperparams, PosteriorPrediction};


pub use assessment::{Responder, SessionState};
pub use heatmap::Heatmap;
pub use treatment::BorderSet;
