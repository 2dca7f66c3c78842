#![cfg_attr(not(test), no_std)]

//! Self-attentive end-to-end neural diarization (SA-EEND).
//!
//! This crate holds the pure algorithmic pieces and needs only `alloc`:
//!
//! - [`numerics`]: dense matrices, elementary layers with analytic gradients,
//!   the seedable RNG and a finite-difference gradient checker.
//! - [`simulator`]: multi-speaker mixture simulation over synthetic speakers.
//! - [`features`]: log-mel extraction, frame splicing and subsampling.
//! - [`model`]: the self-attention encoder with its full backward pass.
//! - [`training`]: permutation-free loss, Adam with warmup scheduling,
//!   checkpoint averaging and fine-tuning.
//! - [`scoring`]: posterior binarization and diarization error rate.
//!
//! File formats, audio IO and the command line live in the `eend` crate.

extern crate alloc;

pub mod error;
pub mod features;
pub mod labels;
pub mod model;
pub mod numerics;
pub mod scoring;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
pub use features::FeatureSequence;
pub use labels::FrameLabels;
pub use model::{ForwardCache, ModelConfig, ModelParams};
pub use numerics::{Matrix, Rng};
pub use scoring::{DerReport, Segment, SegmentList};
pub use simulator::{Mixture, SimSpec, SpeakerModel};
pub use training::{TrainConfig, TrainOutcome};
