//! Semi-supervised sequence learning for stress detection from wearable and
//! smartphone sensor streams.
//!
//! The pipeline runs from raw recordings to interpretable predictions:
//!
//! * [`features`] turns RR intervals, skin conductance and phone logs into
//!   per-step feature rows, and [`data`] cuts those into labeled and unlabeled
//!   windows with participant-level folds.
//! * [`augment`] perturbs windows (jitter, scaling, time and magnitude warps).
//! * [`nn`] holds the hand-differentiated LSTM classifier and its training
//!   primitives.
//! * [`autoencoder`] pretrains the LSTM stack on unlabeled windows and
//!   [`active`] chooses which unlabeled windows to pretrain on.
//! * [`trainer`] runs the supervised and consistency-regularized loops,
//!   [`eval`] scores them and [`saliency`] explains them.
//! * [`synth`] generates wearable-like synthetic cohorts and benchmarks the
//!   method variants against each other.

pub mod active;
pub mod augment;
pub mod config;
pub mod autoencoder;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod rng;
pub mod saliency;
pub mod spline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngSeed;
