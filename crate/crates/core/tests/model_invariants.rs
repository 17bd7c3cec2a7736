//! Velocity-field properties checked against independent oracles.

mod common;

use common::{gradient_check, l2_diff, random_bundle, small_config, uniform};
use dub_engine::conditioning::{assemble_conditioning, Context};
use dub_engine::model::{ModelConfig, VelocityModel};
use dub_engine::sample::{gaussian, ode_solve};
use dub_engine::tensor::Mat;
use dub_engine::train::{train, training_bundle, velocity_target, Adam, TrainConfig};
use dub_engine::world::generate_clips;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backprop_matches_central_differences() {
    let cfg = small_config();
    let model = VelocityModel::new(cfg, 3).unwrap();
    for (seed, t) in [(1u64, 0.25f64), (2, 0.8)] {
        let bundle = random_bundle(&cfg, seed, 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let target = uniform(6, cfg.c_lat, &mut rng);
        let worst = gradient_check(&model, &bundle, t, &target, 64, 1e-3);
        assert!(worst < 1e-2, "t = {t}: worst relative error {worst:.3e}");
    }
}

#[test]
fn swapping_context_frames_changes_the_output() {
    let cfg = small_config();
    let model = VelocityModel::new(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ctx = uniform(3, cfg.c_lat, &mut rng);
    let swapped = Mat::vstack(&[&ctx.slice_rows(1, 2), &ctx.slice_rows(0, 1), &ctx.slice_rows(2, 3)]);
    let x_t = uniform(6, cfg.c_lat, &mut rng);
    let r = uniform(1, cfg.c_lat, &mut rng);
    let audio = uniform(9, cfg.audio_token_dim(), &mut rng);
    let run = |c: &Mat<f32>| {
        let b = assemble_conditioning(&x_t, Context::Frames(c), r.row(0), 1)
            .unwrap()
            .with_audio(audio.clone())
            .unwrap();
        model.forward(&b, 0.5).unwrap().slice_rows(3, 9)
    };
    assert!(l2_diff(&run(&ctx), &run(&swapped)) > 1e-4);
}

#[test]
fn reference_frame_reaches_the_output() {
    let cfg = small_config();
    let model = VelocityModel::new(cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ctx = uniform(3, cfg.c_lat, &mut rng);
    let x_t = uniform(6, cfg.c_lat, &mut rng);
    let audio = uniform(9, cfg.audio_token_dim(), &mut rng);
    let run = |r: &[f32]| {
        let b = assemble_conditioning(&x_t, Context::Frames(&ctx), r, 1)
            .unwrap()
            .with_audio(audio.clone())
            .unwrap();
        model.forward(&b, 0.5).unwrap()
    };
    let a = run(&vec![0.5; cfg.c_lat]);
    let b = run(&vec![-0.5; cfg.c_lat]);
    // Every position sees the reference through cross-attention, not just slot 0.
    assert!(l2_diff(&a.slice_rows(8, 9), &b.slice_rows(8, 9)) > 1e-4);
}

#[test]
fn trained_model_uses_audio() {
    let clips = generate_clips(2, 165, 3).unwrap();
    let config = TrainConfig {
        steps: 20,
        batch_size: 2,
        model: small_config(),
        ..TrainConfig::default()
    };
    let model = train(&clips, &config).unwrap().model;
    let bundle = random_bundle(&config.model, 8, 3, 18);
    let silent = bundle
        .clone()
        .with_audio(Mat::zeros(21, config.model.audio_token_dim()))
        .unwrap();
    let a = model.forward(&bundle, 0.6).unwrap();
    let b = model.forward(&silent, 0.6).unwrap();
    assert!(l2_diff(&a, &b) > 1e-4);
}

/// One frame, one channel, data `N(μ, σ²)`: the learned flow must carry noise
/// back to the data mean, which only happens if the loss target and the Euler
/// update agree on direction.
#[test]
fn trained_flow_recovers_the_data_mean() {
    let (mu, sigma) = (0.7f32, 0.3f32);
    let cfg = ModelConfig {
        depth: 1,
        width: 16,
        heads: 2,
        c_lat: 1,
        d_ref: 4,
        audio_window: 0,
        ff_mult: 2,
        ..ModelConfig::default()
    };
    let mut model = VelocityModel::new(cfg, 0).unwrap();
    let mut adam = Adam::new(model.params(), 3e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let audio = Mat::zeros(1, cfg.audio_token_dim());
    let reference = [0.0f32];
    let batch = 32;
    for _ in 0..600 {
        let mut total = model.params().zeros_like();
        for _ in 0..batch {
            let x0 = Mat::from_vec(1, 1, vec![mu + sigma * gaussian(1, 1, &mut rng).get(0, 0)]);
            let noise = gaussian(1, 1, &mut rng);
            let t: f32 = rng.random_range(0.0..1.0);
            let b = training_bundle(&x0, Context::Empty { t_c: 0 }, &reference, &audio, t, &noise, 1).unwrap();
            let (_, g) = model.loss_and_grads(&b, t, &velocity_target(&x0, &noise)).unwrap();
            total.add_assign(&g);
        }
        total.scale(1.0 / batch as f32);
        adam.update(model.params_mut(), &total);
    }

    let n = 400;
    let mut sum = 0.0f64;
    for _ in 0..n {
        let init = gaussian(1, 1, &mut rng);
        let mut b = assemble_conditioning(&init, Context::Empty { t_c: 0 }, &reference, 1)
            .unwrap()
            .with_audio(audio.clone())
            .unwrap();
        sum += ode_solve(&model, &mut b, &init, 40, 1.0).unwrap().get(0, 0) as f64;
    }
    let mean = sum / n as f64;
    assert!((mean - mu as f64).abs() < 0.05, "sample mean {mean:.3}, data mean {mu}");
}
