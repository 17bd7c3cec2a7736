//! Generate a talking-actor clip, summarize its factor tracks, and render it.
//!
//! `cargo run --release --example synthetic_world -- [out_dir] [pixel_frames]`

use std::path::PathBuf;

use dub_engine::latent::factor;
use dub_engine::metrics::sync_score;
use dub_engine::world::{generate_clip, render, CameraKind};

fn spread(track: &[f32]) -> (f32, f32) {
    let lo = track.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = track.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    (lo, hi)
}

fn main() -> dub_engine::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/world_frames".into()));
    let len: usize = args.next().map_or(405, |s| s.parse().expect("pixel_frames must be an integer"));

    for (i, kind) in CameraKind::ALL.into_iter().enumerate() {
        let clip = generate_clip(len, 100 + i as u64, kind)?;
        let v = &clip.video;
        println!("{kind:?} camera, {} pixel / {} latent frames", clip.pixel_len(), v.latent_len());
        for (name, slice) in [
            ("mouth", factor::MOUTH),
            ("head", factor::HEAD),
            ("gesture", factor::GESTURE),
            ("identity", factor::IDENTITY),
            ("camera", factor::CAMERA),
            ("style", factor::STYLE),
        ] {
            let track = v.factor_track(slice.clone());
            let (lo, hi) = spread(track.data());
            println!("  {name:<9} {} ch  range [{lo:+.3}, {hi:+.3}]", slice.len());
        }
        let s = sync_score(v, &clip.audio, 2)?;
        println!("  ground-truth sync {:.3}", s.value);

        let dir = out.join(format!("{kind:?}").to_lowercase());
        let frames = render(v, &dir)?;
        println!("  wrote {} frames to {}", frames.len(), dir.display());
    }
    Ok(())
}
