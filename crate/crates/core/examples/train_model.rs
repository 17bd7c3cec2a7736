//! Train a small velocity model on synthetic clips and print the loss curve.
//!
//! `cargo run --release --example train_model -- [steps] [strategy]`

use std::time::Instant;

use dub_engine::train::{train, ReferenceStrategy, StrategyKind, TrainConfig};
use dub_engine::world::generate_clips;

fn main() -> dub_engine::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(200, |s| s.parse().expect("steps must be an integer"));
    let kind: StrategyKind = args.next().as_deref().unwrap_or("m3").parse()?;

    let clips = generate_clips(16, 405, 7)?;
    let config = TrainConfig {
        steps,
        log_every: (steps / 10).max(1),
        strategy: ReferenceStrategy::new(kind),
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let run = train(&clips, &config)?;
    for e in &run.log {
        println!("step {:>5}  loss {:.4}", e.step, e.loss);
    }
    println!(
        "{} params, {steps} steps in {:.1}s",
        run.model.count_params(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
