//! Velocity network, its autodiff tape, audio alignment, and checkpoints.

pub mod audio_align;
pub mod autodiff;
pub mod checkpoint;
pub mod velocity;

pub use audio_align::align_audio;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use velocity::{ModelConfig, VelocityModel};
