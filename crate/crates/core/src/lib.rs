//! Anomaly detection for machine sounds from complex STFT features.
//!
//! The crate covers the audio frontend ([`dsp`]), the network ([`model`]),
//! dataset generation and loading ([`data`]), training with checkpoints
//! ([`train`]) and scoring ([`eval`]).

pub mod check;
pub mod data;
pub mod dsp;
mod error;
pub mod eval;
pub mod model;
pub mod train;

pub use error::{CheckpointError, Error, Result};
