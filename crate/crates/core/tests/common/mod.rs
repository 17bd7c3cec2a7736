//! Oracles shared by the integration suites.

#![allow(dead_code)]

use dub_engine::conditioning::{assemble_conditioning, ConditioningBundle, Context};
use dub_engine::model::autodiff::ParamId;
use dub_engine::model::{ModelConfig, VelocityModel};
use dub_engine::tensor::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config() -> ModelConfig {
    ModelConfig {
        depth: 2,
        width: 32,
        heads: 4,
        d_ref: 16,
        ..ModelConfig::default()
    }
}

pub fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f32> {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Context of `t_c` frames, `t` noisy frames, one reference, random audio.
pub fn random_bundle(cfg: &ModelConfig, seed: u64, t_c: usize, t: usize) -> ConditioningBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = uniform(t_c, cfg.c_lat, &mut rng);
    let x_t = uniform(t, cfg.c_lat, &mut rng);
    let r = uniform(1, cfg.c_lat, &mut rng);
    let audio = uniform(t_c + t, cfg.audio_token_dim(), &mut rng);
    assemble_conditioning(&x_t, Context::Frames(&ctx), r.row(0), cfg.m_ch)
        .unwrap()
        .with_audio(audio)
        .unwrap()
}

/// Worst relative disagreement between tape gradients and central differences,
/// evaluated in f64 on `n` parameter scalars spread over every block.
pub fn gradient_check(model: &VelocityModel, bundle: &ConditioningBundle, t: f64, target: &Mat<f32>, n: usize, eps: f64) -> f64 {
    let params = model.params().cast::<f64>();
    let mut grads = params.zeros_like();
    model.accumulate_grads(&params, bundle, t, target, &mut grads).unwrap();

    let blocks = params.len();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for k in 0..n {
        let id = ParamId(k * blocks / n);
        let e = rng.random_range(0..params.get(id).data().len());
        let mut plus = params.clone();
        plus.get_mut(id).data_mut()[e] += eps;
        let mut minus = params.clone();
        minus.get_mut(id).data_mut()[e] -= eps;
        let lp = model.loss_with(&plus, bundle, t, target).unwrap();
        let lm = model.loss_with(&minus, bundle, t, target).unwrap();
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grads.get(id).data()[e];
        let scale = numeric.abs().max(analytic.abs());
        // Below this scale both sides are rounding noise.
        if scale > 1e-7 {
            worst = worst.max((numeric - analytic).abs() / scale);
        }
    }
    worst
}

pub fn l2_diff(a: &Mat<f32>, b: &Mat<f32>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}
