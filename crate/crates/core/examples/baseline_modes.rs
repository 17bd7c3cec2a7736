//! Streaming against the I2V and FL2V baselines on paired seeds.
//!
//! `cargo run --release --example baseline_modes -- [checkpoint.bin] [seeds]`
//!
//! I2V feeds each chunk its own last frame as reference, so identity errors
//! compound; FL2V drops context and pins both ends, so seams jump.

use std::path::Path;

use dub_engine::experiment::{compare_paired, held_out_requests, paired_runs};
use dub_engine::model::{load_checkpoint, VelocityModel};
use dub_engine::sample::{DubMode, SamplerConfig};
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
    let n: usize = args.next().map_or(10, |s| s.parse().expect("seeds must be an integer"));

    let requests = held_out_requests(n, 81 + 9 * 72, 5)?;
    let seeds: Vec<u64> = (0..n as u64).collect();
    let modes = [DubMode::Streaming, DubMode::I2v, DubMode::Fl2v];
    let records = paired_runs(&model, "model", &requests, &seeds, &modes, &SamplerConfig::default())?;
    let pick = |mode: DubMode, f: fn(&dub_engine::metrics::DubReport) -> f64| -> Vec<f64> {
        records.iter().filter(|r| r.mode == mode).map(|r| f(&r.report)).collect()
    };

    let drift = |r: &dub_engine::metrics::DubReport| r.identity_drift_mean;
    let jerk = |r: &dub_engine::metrics::DubReport| r.boundary_jerk_ratio.unwrap_or(f64::NAN);
    for mode in modes {
        let d = pick(mode, drift);
        let j = pick(mode, jerk);
        println!(
            "{mode:<9} drift {:.4}  jerk {:.3}",
            d.iter().sum::<f64>() / n as f64,
            j.iter().sum::<f64>() / n as f64
        );
    }
    let c = compare_paired(&pick(DubMode::I2v, drift), &pick(DubMode::Streaming, drift));
    println!("i2v drifts more on {}/{} seeds, sign test p = {:.4}", c.wins, c.informative, c.p_value);
    let c = compare_paired(&pick(DubMode::Fl2v, jerk), &pick(DubMode::Streaming, jerk));
    println!("fl2v seams jerk more on {}/{} seeds, sign test p = {:.4}", c.wins, c.informative, c.p_value);
    Ok(())
}
