//! Train one model per reference strategy and compare them on paired dubbing runs.
//!
//! `cargo run --release --example reference_ablation -- [steps] [seeds]`

use dub_engine::experiment::{compare_paired, held_out_requests, paired_runs};
use dub_engine::sample::{DubMode, SamplerConfig};
use dub_engine::train::{train, ReferenceStrategy, StrategyKind, TrainConfig};
use dub_engine::world::generate_clips;

fn main() -> dub_engine::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(2000, |s| s.parse().expect("steps must be an integer"));
    let n_seeds: usize = args.next().map_or(12, |s| s.parse().expect("seeds must be an integer"));

    let clips = generate_clips(16, 405, 7)?;
    let requests = held_out_requests(n_seeds, 81 + 9 * 72, 99)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).collect();
    let modes = [DubMode::Streaming, DubMode::I2v, DubMode::Fl2v];

    let mut by_kind = Vec::new();
    for kind in StrategyKind::ALL {
        let config = TrainConfig {
            steps,
            strategy: ReferenceStrategy::new(kind),
            ..TrainConfig::default()
        };
        let run = train(&clips, &config)?;
        let last = run.log.last().map_or(f64::NAN, |e| e.loss);
        let records = paired_runs(&run.model, kind.name(), &requests, &seeds, &modes, &SamplerConfig::default())?;
        println!("{kind}: final loss {last:.4}");
        for mode in modes {
            let rs: Vec<_> = records.iter().filter(|r| r.mode == mode).collect();
            let mean = |f: &dyn Fn(&dub_engine::metrics::DubReport) -> f64| {
                rs.iter().map(|r| f(&r.report)).sum::<f64>() / rs.len() as f64
            };
            println!(
                "  {mode:<9} sync {:.3}  drift {:.4}  jerk {:.3}  control {:.4}  camera {:.4}",
                mean(&|r| r.sync_corr),
                mean(&|r| r.identity_drift_mean),
                mean(&|r| r.boundary_jerk_ratio.unwrap_or(f64::NAN)),
                mean(&|r| r.control_strength),
                mean(&|r| r.camera_error),
            );
        }
        by_kind.push((kind, records));
    }

    let metric = |kind: StrategyKind, f: fn(&dub_engine::metrics::DubReport) -> f64| -> Vec<f64> {
        by_kind
            .iter()
            .find(|(k, _)| *k == kind)
            .unwrap()
            .1
            .iter()
            .filter(|r| r.mode == DubMode::Streaming)
            .map(|r| f(&r.report))
            .collect()
    };
    let c = compare_paired(&metric(StrategyKind::M1, |r| r.control_strength), &metric(StrategyKind::M3, |r| r.control_strength));
    println!("control M1 > M3: {c:?}");
    let c = compare_paired(&metric(StrategyKind::M2, |r| r.identity_drift_mean), &metric(StrategyKind::M3, |r| r.identity_drift_mean));
    println!("drift   M2 > M3: {c:?}");
    let c = compare_paired(&metric(StrategyKind::M3, |r| r.sync_corr), &metric(StrategyKind::M1, |r| r.sync_corr));
    println!("sync    M3 > M1: {c:?}");
    Ok(())
}
