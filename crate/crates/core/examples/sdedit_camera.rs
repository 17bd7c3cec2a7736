//! How much of the source camera path survives when sampling starts at `t0`.
//!
//! `cargo run --release --example sdedit_camera -- [checkpoint.bin] [seeds]`

use std::path::Path;

use dub_engine::experiment::held_out_requests;
use dub_engine::metrics::{camera_error, sync_score, SYNC_MAX_LAG};
use dub_engine::model::{load_checkpoint, VelocityModel};
use dub_engine::sample::{dub, SamplerConfig};
use dub_engine::train::{train, TrainConfig};
use dub_engine::world::generate_clips;

fn model(arg: Option<String>) -> dub_engine::Result<VelocityModel> {
    match arg.filter(|a| a != "-") {
        Some(p) => Ok(load_checkpoint(Path::new(&p))?.0),
        None => {
            println!("no checkpoint given; training 300 steps");
            let clips = generate_clips(16, 405, 7)?;
            Ok(train(&clips, &TrainConfig { steps: 300, ..TrainConfig::default() })?.model)
        }
    }
}

fn main() -> dub_engine::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = model(args.next())?;
    let n: usize = args.next().map_or(20, |s| s.parse().expect("seeds must be an integer"));
    let requests = held_out_requests(n, 153, 31)?;

    println!("{:>4}  {:>12}  {:>6}", "t0", "camera err", "sync");
    for t0 in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let (mut cam, mut sync) = (0.0, 0.0);
        for (i, req) in requests.iter().enumerate() {
            let cfg = SamplerConfig {
                sdedit_t0: Some(t0),
                seed: i as u64,
                ..SamplerConfig::default()
            };
            let out = dub(req, &model, &cfg)?;
            cam += camera_error(&out.video, req.source())?;
            sync += sync_score(&out.video, req.audio(), SYNC_MAX_LAG)?.value;
        }
        println!("{t0:>4.1}  {:>12.4}  {:>6.3}", cam / n as f64, sync / n as f64);
    }
    Ok(())
}
