//! Streaming, audio-driven video dubbing on a synthetic latent world.
//!
//! A conditional flow-matching velocity network is trained on ground-truth
//! "talking actor" clips and then generates arbitrarily long dubbed sequences
//! chunk by chunk, carrying context frames across chunk boundaries and
//! anchoring each chunk to a reference keyframe from the source video.

pub mod cli;
pub mod conditioning;
pub mod container;
pub mod error;
pub mod experiment;
pub mod frames;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod plan;
pub mod sample;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod world;

pub use error::{Error, Result};
