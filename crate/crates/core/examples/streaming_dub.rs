//! Re-dub a held-out clip chunk by chunk and report each chunk.
//!
//! `cargo run --release --example streaming_dub -- [checkpoint.bin]`
//!
//! Without a checkpoint a short training run supplies the model; expect
//! weaker sync than a full 2000-step model.

use std::path::Path;

use dub_engine::experiment::held_out_requests;
use dub_engine::metrics::evaluate;
use dub_engine::model::{load_checkpoint, VelocityModel};
use dub_engine::sample::{dub, SamplerConfig};
use dub_engine::train::{train, TrainConfig};
use dub_engine::world::generate_clips;

fn model(arg: Option<String>) -> dub_engine::Result<VelocityModel> {
    match arg {
        Some(p) => Ok(load_checkpoint(Path::new(&p))?.0),
        None => {
            println!("no checkpoint given; training 300 steps");
            let clips = generate_clips(16, 405, 7)?;
            let config = TrainConfig { steps: 300, ..TrainConfig::default() };
            Ok(train(&clips, &config)?.model)
        }
    }
}

fn main() -> dub_engine::Result<()> {
    let model = model(std::env::args().nth(1))?;
    let request = held_out_requests(1, 81 + 5 * 72, 2024)?.remove(0);
    let output = dub(&request, &model, &SamplerConfig::default())?;
    let report = evaluate(&request, &output)?;

    println!("{} latent frames in {} chunks", output.video.latent_len(), output.chunks.len());
    for (trace, chunk) in output.chunks.iter().zip(&report.chunks) {
        let context = trace.context.as_ref().map_or("zero-context".to_string(), |c| format!("{} frames", c.rows()));
        println!(
            "chunk {}: window [{}, {}) emits [{}, {}), context {context}, identity drift {:.4}",
            chunk.index, trace.window.start, trace.window.end, trace.emit.start, trace.emit.end, chunk.identity_drift_mean
        );
    }
    println!(
        "sync {:.3}  drift mean {:.4} max {:.4}  seam jerk {:.3}  camera error {:.4}",
        report.sync_corr,
        report.identity_drift_mean,
        report.identity_drift_max,
        report.boundary_jerk_ratio.unwrap_or(f64::NAN),
        report.camera_error
    );
    Ok(())
}
