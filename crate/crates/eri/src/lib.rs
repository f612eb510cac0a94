//! Emotional reaction intensity estimation from audio-visual features.
//!
//! Reverse-mode autodiff core, GRU + transformer-encoder sequence model,
//! feature I/O, MFCC extraction, training/evaluation, and a synthetic
//! benchmark for probing what the attention weights localize.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod init;
pub mod mfcc;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{EriError, Result};
pub use tensor::Tensor;
