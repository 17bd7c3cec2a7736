//! Synthetic talking-actor world: audio, ground-truth latents, rendering, and datasets.

pub mod actor;
pub mod audio;
pub mod dataset;
pub mod render;

pub use actor::{simulate_actor, ActorSpec, CameraKind, CameraTrajectory};
pub use audio::{gen_audio, AudioTrack, D_AUDIO};
pub use dataset::{generate_clip, generate_clips, load_clips, make_dataset, Clip, DatasetSummary};
pub use render::render;
