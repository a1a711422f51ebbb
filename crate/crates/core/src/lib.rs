//! Respiratory sound classification toolkit.
//!
//! Breathing cycles are turned into fixed-width log-Mel spectrograms and fed to a
//! three-stage network: a convolutional feature extractor, a bidirectional LSTM,
//! and a dense softmax head over {normal, crackle, wheeze, both}. Trained models
//! can be specialised per patient by retraining only the head, and compressed by
//! per-layer logarithmic weight quantization.

pub mod audio;
pub mod augment;
pub mod container;
pub mod dataset;
pub mod error;
pub mod model;
pub mod nn;
pub mod par;
pub mod quantize;
pub mod synth;
pub mod train;
pub mod tuning;

pub use error::{Error, Result};
