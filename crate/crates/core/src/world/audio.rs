//! Synthetic audio tracks: a smooth loudness envelope plus derived feature vectors.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frames::FPS;
use crate::tensor::Mat;

/// Feature channels per pixel frame.
pub const D_AUDIO: usize = 8;

/// Raw features before projection: envelope, its derivative, and two phase channels.
const RAW_FEATURES: usize = 4;

/// The projection is a fixed property of the synthetic "embedder", shared by all tracks.
const PROJECTION_SEED: u64 = 0x5EED_A0D1;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioTrack {
    features: Mat<f32>,
    envelope: Vec<f32>,
    pub fps: f64,
}

impl AudioTrack {
    pub fn new(features: Mat<f32>, envelope: Vec<f32>) -> Result<Self> {
        if envelope.is_empty() {
            return Err(Error::Shape("audio track needs at least one frame".into()));
        }
        if features.rows() != envelope.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} envelope samples",
                features.rows(),
                envelope.len()
            )));
        }
        if envelope.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(Error::Numerical("envelope leaves [0, 1]".into()));
        }
        if !features.all_finite() {
            return Err(Error::Numerical("audio features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            envelope,
            fps: FPS,
        })
    }

    /// Build a track whose features are the standard projection of `envelope`.
    pub fn from_envelope(envelope: Vec<f32>) -> Result<Self> {
        let features = project_features(&envelope, &vec![(0.0, 0.0); envelope.len()]);
        Self::new(features, envelope)
    }

    pub fn len(&self) -> usize {
        self.envelope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelope.is_empty()
    }

    pub fn features(&self) -> &Mat<f32> {
        &self.features
    }

    pub fn envelope(&self) -> &[f32] {
        &self.envelope
    }

    /// Copy of pixel frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> AudioTrack {
        AudioTrack {
            features: self.features.slice_rows(start, end),
            envelope: self.envelope[start..end].to_vec(),
            fps: self.fps,
        }
    }
}

fn projection() -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (RAW_FEATURES as f64).sqrt();
    Mat::from_vec(
        RAW_FEATURES,
        D_AUDIO,
        (0..RAW_FEATURES * D_AUDIO)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect(),
    )
}

fn project_features(envelope: &[f32], phase: &[(f64, f64)]) -> Mat<f32> {
    let n = envelope.len();
    let mut raw = Mat::<f64>::zeros(n, RAW_FEATURES);
    for i in 0..n {
        let prev = envelope[i.saturating_sub(1)] as f64;
        let next = envelope[(i + 1).min(n - 1)] as f64;
        let row = raw.row_mut(i);
        row[0] = envelope[i] as f64;
        row[1] = 2.5 * (next - prev);
        row[2] = phase[i].0;
        row[3] = phase[i].1;
    }
    raw.matmul(&projection()).cast()
}

/// Seeded synthetic speech: 3–6 slow sinusoids plus short emphasis bumps, clipped to `[0, 1]`.
pub fn gen_audio(duration_frames: usize, seed: u64) -> Result<AudioTrack> {
    if duration_frames == 0 {
        return Err(Error::Shape("audio duration must be at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sin = rng.random_range(3..=6);
    let waves: Vec<(f64, f64, f64)> = (0..n_sin)
        .map(|_| {
            (
                rng.random_range(0.4..3.0),
                rng.random_range(0.08..0.25),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    let base = rng.random_range(0.35..0.55);
    let n_bumps = duration_frames.div_ceil(40);
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.random_range(0.0..duration_frames as f64),
                rng.random_range(1.5..4.0),
                rng.random_range(0.2..0.5),
            )
        })
        .collect();

    let mut envelope = Vec::with_capacity(duration_frames);
    let mut phase = Vec::with_capacity(duration_frames);
    let (f0, _, p0) = waves[0];
    for n in 0..duration_frames {
        let t = n as f64 / FPS;
        let mut e = base;
        for &(f, a, p) in &waves {
            e += a * (TAU * f * t + p).sin();
        }
        for &(c, w, a) in &bumps {
            let d = (n as f64 - c) / w;
            e += a * (-0.5 * d * d).exp();
        }
        envelope.push(e.clamp(0.0, 1.0) as f32);
        let ph = TAU * f0 * t + p0;
        phase.push((ph.sin(), ph.cos()));
    }
    let features = project_features(&envelope, &phase);
    AudioTrack::new(features, envelope)
}
