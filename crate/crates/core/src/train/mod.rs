//! Conditional flow-matching training.
//!
//! Convention shared with [`crate::sample`]: `t = 0` is data, `t = 1` is noise,
//! `x_t = (1 − t)·x₀ + t·ε`, and the network regresses `x₀ − ε`, which points
//! from noise toward data. Sampling integrates from `t = 1` down to `t = 0`.

pub mod optim;
pub mod strategy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::{assemble_conditioning, ConditioningBundle, Context};
use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;
use crate::model::audio_align::align_audio_with;
use crate::model::autodiff::Grads;
use crate::model::{ModelConfig, VelocityModel};
use crate::plan::Span;
use crate::tensor::Mat;
use crate::world::Clip;

pub use optim::Adam;
pub use strategy::{ReferenceStrategy, StrategyKind};

/// Training loss above this aborts the run.
pub const DIVERGENCE_LOSS: f32 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub strategy: ReferenceStrategy,
    pub context_dropout_prob: f64,
    pub grad_clip: f64,
    pub log_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            learning_rate: 3e-4,
            seed: 0,
            strategy: ReferenceStrategy::new(StrategyKind::M3),
            context_dropout_prob: 0.1,
            grad_clip: 1.0,
            log_every: 50,
            model: ModelConfig::default(),
        }
    }
}

/// False for NaN as well as non-positive values.
fn is_positive(x: f64) -> bool {
    x.partial_cmp(&0.0) == Some(std::cmp::Ordering::Greater)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size and log_every must be positive".into()));
        }
        if !is_positive(self.learning_rate) || !is_positive(self.grad_clip) {
            return Err(Error::Config("learning_rate and grad_clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.context_dropout_prob) {
            return Err(Error::Config("context_dropout_prob must lie in [0, 1]".into()));
        }
        self.strategy.validate()?;
        self.model.validate()
    }
}

/// One training example cut from a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingWindow {
    pub pixel_span: Span,
    pub latent_span: Span,
    /// `[t_c × C]` clean context, or zeros when dropped.
    pub context: Mat<f32>,
    pub context_dropped: bool,
    /// `[t × C]` frames after the context.
    pub x0: Mat<f32>,
    /// All `t_c + t` frames of the window.
    pub full: Mat<f32>,
}

impl TrainingWindow {
    /// Frames the loss supervises and the context handed to assembly.
    pub fn supervised(&self) -> (&Mat<f32>, Context<'_>) {
        if self.context_dropped {
            (&self.full, Context::Empty { t_c: self.context.rows() })
        } else {
            (&self.x0, Context::Frames(&self.context))
        }
    }
}

/// Random latent-aligned chunk window; context is dropped with `context_dropout_prob`.
pub fn sample_training_window<R: Rng + ?Sized>(
    clip: &Clip,
    arith: &FrameArithmetic,
    context_dropout_prob: f64,
    rng: &mut R,
) -> Result<TrainingWindow> {
    let clip_len = clip.pixel_len();
    if clip_len < arith.chunk_pixel_len {
        return Err(Error::TooShort {
            got: clip_len,
            need: arith.chunk_pixel_len,
        });
    }
    let chunk_lat = arith.chunk_latent_len();
    let t_c = arith.context_latent_len();
    let last_start = clip.video.latent_len() - chunk_lat;
    let j = rng.random_range(0..=last_start);
    let start_px = arith.temporal_stride * j;
    let full = clip.video.slice(j, j + chunk_lat);
    let dropped = rng.random_bool(context_dropout_prob);
    let context = if dropped {
        Mat::zeros(t_c, full.cols())
    } else {
        full.slice_rows(0, t_c)
    };
    Ok(TrainingWindow {
        pixel_span: Span::new(start_px, start_px + arith.chunk_pixel_len),
        latent_span: Span::new(j, j + chunk_lat),
        context,
        context_dropped: dropped,
        x0: full.slice_rows(t_c, chunk_lat),
        full,
    })
}

/// `(1 − t)·x₀ + t·ε`.
pub fn interpolate(x0: &Mat<f32>, noise: &Mat<f32>, t: f32) -> Mat<f32> {
    assert_eq!(x0.shape(), noise.shape(), "interpolate: shape mismatch");
    let data = x0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&x, &n)| (1.0 - t) * x + t * n)
        .collect();
    Mat::from_vec(x0.rows(), x0.cols(), data)
}

/// Regression target `x₀ − ε`.
pub fn velocity_target(x0: &Mat<f32>, noise: &Mat<f32>) -> Mat<f32> {
    let data = x0.data().iter().zip(noise.data()).map(|(&x, &n)| x - n).collect();
    Mat::from_vec(x0.rows(), x0.cols(), data)
}

/// Assemble the conditioning for `x_t`, ready for the network.
pub fn training_bundle(
    x0: &Mat<f32>,
    context: Context<'_>,
    x_ref: &[f32],
    audio_tokens: &Mat<f32>,
    t: f32,
    noise: &Mat<f32>,
    m_ch: usize,
) -> Result<ConditioningBundle> {
    if noise.shape() != x0.shape() {
        return Err(Error::Shape("noise must match x0".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("t = {t} outside [0, 1]")));
    }
    let x_t = interpolate(x0, noise, t);
    assemble_conditioning(&x_t, context, x_ref, m_ch)?.with_audio(audio_tokens.clone())
}

/// Flow-matching loss on the noisy span.
#[allow(clippy::too_many_arguments)]
pub fn fm_loss(
    model: &VelocityModel,
    x0: &Mat<f32>,
    context: Context<'_>,
    x_ref: &[f32],
    audio_tokens: &Mat<f32>,
    t: f32,
    noise: &Mat<f32>,
) -> Result<f32> {
    let bundle = training_bundle(x0, context, x_ref, audio_tokens, t, noise, model.config().m_ch)?;
    let v = model.forward(&bundle, t)?;
    if !v.all_finite() {
        return Err(Error::Numerical(format!("non-finite velocity at t = {t}")));
    }
    let span = bundle.noisy_span();
    let target = velocity_target(x0, noise);
    let mut acc = 0.0f64;
    for i in 0..span.len() {
        for (&p, &q) in v.row(span.start + i).iter().zip(target.row(i)) {
            acc += ((p - q) as f64).powi(2);
        }
    }
    Ok((acc / (span.len() * target.cols()) as f64) as f32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Mean loss over the steps since the previous entry.
    pub loss: f64,
    pub lr: f64,
    pub strategy: StrategyKind,
    pub seed: u64,
}

/// Stateful trainer; all randomness flows from one generator seeded by `config.seed`.
pub struct Trainer<'a> {
    clips: &'a [Clip],
    audio_tokens: Vec<Mat<f32>>,
    config: TrainConfig,
    arith: FrameArithmetic,
    model: VelocityModel,
    optim: Adam,
    rng: ChaCha8Rng,
    step: usize,
    pending: Vec<f32>,
    log: Vec<LogEntry>,
}

impl<'a> Trainer<'a> {
    pub fn new(clips: &'a [Clip], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if clips.is_empty() {
            return Err(Error::Config("training needs at least one clip".into()));
        }
        let arith = FrameArithmetic::default();
        let audio_tokens = clips
            .iter()
            .map(|c| align_audio_with(&c.audio, c.video.latent_len(), config.model.audio_window, &arith))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init_seed = rng.random();
        let model = VelocityModel::new(config.model, init_seed)?;
        let optim = Adam::new(model.params(), config.learning_rate);
        Ok(Self {
            clips,
            audio_tokens,
            arith,
            model,
            optim,
            rng,
            step: 0,
            pending: Vec::new(),
            log: Vec::new(),
            config,
        })
    }

    pub fn model(&self) -> &VelocityModel {
        &self.model
    }

    pub fn into_model(self) -> VelocityModel {
        self.model
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Sample one example: window, reference, time, noise.
    fn example(&mut self) -> Result<(ConditioningBundle, f32, Mat<f32>)> {
        let ci = self.rng.random_range(0..self.clips.len());
        let clip = &self.clips[ci];
        let mut attempts = 0;
        let (window, ref_px) = loop {
            let w = sample_training_window(clip, &self.arith, self.config.context_dropout_prob, &mut self.rng)?;
            match self.config.strategy.sample(clip.pixel_len(), w.pixel_span, &mut self.rng) {
                Ok(p) => break (w, p),
                Err(Error::Infeasible(msg)) => {
                    attempts += 1;
                    if attempts >= 64 || !self.strategy_feasible(clip) {
                        return Err(Error::Infeasible(msg));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let x_ref = clip.video.frame(self.arith.latent_index_of_pixel(ref_px)).to_vec();
        let (x0, context) = window.supervised();
        let tokens = self.audio_tokens[ci].slice_rows(window.latent_span.start, window.latent_span.end);
        let t: f32 = self.rng.random();
        let noise = Mat::from_vec(
            x0.rows(),
            x0.cols(),
            (0..x0.rows() * x0.cols())
                .map(|_| self.rng.sample::<f32, _>(StandardNormal))
                .collect(),
        );
        let bundle = training_bundle(x0, context, &x_ref, &tokens, t, &noise, self.config.model.m_ch)?;
        Ok((bundle, t, velocity_target(x0, &noise)))
    }

    fn strategy_feasible(&self, clip: &Clip) -> bool {
        let a = &self.arith;
        let last = clip.video.latent_len() - a.chunk_latent_len();
        (0..=last).any(|j| {
            let s = a.temporal_stride * j;
            let span = Span::new(s, s + a.chunk_pixel_len);
            (0..clip.pixel_len()).any(|p| self.config.strategy.admits(clip.pixel_len(), span, p))
        })
    }

    /// One optimizer step over a fresh batch; returns the mean batch loss.
    pub fn step(&mut self) -> Result<f32> {
        let mut grads: Grads<f32> = self.model.params().zeros_like();
        let mut total = 0.0f32;
        for _ in 0..self.config.batch_size {
            let (bundle, t, target) = self.example()?;
            let loss = self
                .model
                .accumulate_grads(self.model.params(), &bundle, t as f64, &target, &mut grads)
                .map_err(|e| Error::Numerical(format!("step {}: {e}", self.step)))?;
            total += loss;
        }
        let n = self.config.batch_size as f32;
        grads.scale(1.0 / n);
        let mean = total / n;
        if !mean.is_finite() || mean > DIVERGENCE_LOSS {
            return Err(Error::Numerical(format!(
                "training diverged at step {}: loss {mean}",
                self.step
            )));
        }
        let norm = grads.global_norm();
        if norm > self.config.grad_clip {
            grads.scale((self.config.grad_clip / norm) as f32);
        }
        self.optim.update(self.model.params_mut(), &grads);
        self.step += 1;
        self.pending.push(mean);
        if self.step.is_multiple_of(self.config.log_every) {
            self.flush_log();
        }
        Ok(mean)
    }

    fn flush_log(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let loss = self.pending.iter().map(|&l| l as f64).sum::<f64>() / self.pending.len() as f64;
        self.pending.clear();
        self.log.push(LogEntry {
            step: self.step,
            loss,
            lr: self.config.learning_rate,
            strategy: self.config.strategy.kind,
            seed: self.config.seed,
        });
    }

    /// Run all configured steps, invoking `on_log` for each new log entry.
    pub fn run(&mut self, mut on_log: impl FnMut(&LogEntry)) -> Result<()> {
        while self.step < self.config.steps {
            let before = self.log.len();
            self.step()?;
            for e in &self.log[before..] {
                on_log(e);
            }
        }
        let before = self.log.len();
        self.flush_log();
        for e in &self.log[before..] {
            on_log(e);
        }
        Ok(())
    }
}

/// Result of a complete training run.
pub struct TrainRun {
    pub model: VelocityModel,
    pub log: Vec<LogEntry>,
}

/// Train from scratch for `config.steps` steps.
pub fn train(clips: &[Clip], config: &TrainConfig) -> Result<TrainRun> {
    let mut trainer = Trainer::new(clips, config.clone())?;
    trainer.run(|_| {})?;
    let log = trainer.log().to_vec();
    Ok(TrainRun {
        model: trainer.into_model(),
        log,
    })
}
