//! Ground-truth "talking actor": factor trajectories driven by an audio envelope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;
use crate::latent::{factor, LatentVideo, C_LAT};
use crate::tensor::Mat;
use crate::world::audio::AudioTrack;

/// Low-pass coefficients of the two head channels (per pixel frame).
const HEAD_SMOOTHING: [f64; 2] = [0.85, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub identity_code: [f32; 4],
    pub head_lag: usize,
    pub gesture_threshold: f32,
    pub gesture_decay: f32,
}

impl ActorSpec {
    pub fn with_identity(identity: [f32; 4]) -> Result<Self> {
        let spec = Self {
            identity_code: normalize(identity)?,
            head_lag: 3,
            gesture_threshold: 0.7,
            gesture_decay: 0.85,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Random identity on the unit sphere with default dynamics.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let v: [f32; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) as f32);
            if let Ok(spec) = Self::with_identity(v) {
                return spec;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm = l2(&self.identity_code);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("identity code has norm {norm}, expected 1")));
        }
        if !(self.gesture_threshold > 0.0 && self.gesture_threshold < 1.0) {
            return Err(Error::Config("gesture threshold must lie in (0, 1)".into()));
        }
        if !(self.gesture_decay > 0.0 && self.gesture_decay < 1.0) {
            return Err(Error::Config("gesture decay must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn normalize(v: [f32; 4]) -> Result<[f32; 4]> {
    let n = l2(&v);
    if !n.is_finite() || n <= 1e-3 {
        return Err(Error::Config("identity code must be a nonzero finite vector".into()));
    }
    Ok(v.map(|x| (x as f64 / n) as f32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraKind {
    Static,
    Pan,
    PiecewiseSmooth,
}

impl CameraKind {
    pub const ALL: [CameraKind; 3] = [CameraKind::Static, CameraKind::Pan, CameraKind::PiecewiseSmooth];
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraTrajectory {
    offsets: Mat<f32>,
    pub kind: CameraKind,
}

impl CameraTrajectory {
    pub fn new(offsets: Mat<f32>, kind: CameraKind) -> Result<Self> {
        if offsets.cols() != 2 || offsets.rows() == 0 {
            return Err(Error::Shape("camera offsets must be [N × 2] with N ≥ 1".into()));
        }
        if !offsets.all_finite() {
            return Err(Error::Numerical("camera offsets contain non-finite values".into()));
        }
        if kind == CameraKind::Static && (1..offsets.rows()).any(|i| offsets.row(i) != offsets.row(0)) {
            return Err(Error::Config("static camera must not move".into()));
        }
        Ok(Self { offsets, kind })
    }

    pub fn offsets(&self) -> &Mat<f32> {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.rows() == 0
    }

    /// Seeded trajectory of `n` pixel frames.
    pub fn generate(kind: CameraKind, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Shape("camera trajectory needs at least one frame".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
        let mut offsets = Mat::<f32>::zeros(n, 2);
        match kind {
            CameraKind::Static => {
                for i in 0..n {
                    offsets.row_mut(i).copy_from_slice(&[start[0] as f32, start[1] as f32]);
                }
            }
            CameraKind::Pan => {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let speed: f64 = rng.random_range(0.4..0.9) / 400.0;
                for i in 0..n {
                    let d = speed * i as f64;
                    offsets.set(i, 0, (start[0] + d * angle.cos()) as f32);
                    offsets.set(i, 1, (start[1] + d * angle.sin()) as f32);
                }
            }
            CameraKind::PiecewiseSmooth => {
                let segment = 50usize;
                let n_points = n / segment + 2;
                let points: Vec<[f64; 2]> = (0..n_points)
                    .map(|_| [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)])
                    .collect();
                for i in 0..n {
                    let k = i / segment;
                    let u = (i % segment) as f64 / segment as f64;
                    let s = u * u * (3.0 - 2.0 * u);
                    let (a, b) = (points[k], points[k + 1]);
                    for d in 0..2 {
                        offsets.set(i, d, (a[d] + s * (b[d] - a[d])) as f32);
                    }
                }
            }
        }
        Self::new(offsets, kind)
    }
}

/// Mean of `signal` over the pixel frames pooled into each latent frame.
pub fn pool_to_latent(signal: &[f64], arith: &FrameArithmetic) -> Result<Vec<f64>> {
    let t = arith.pixel_to_latent(signal.len())?;
    Ok((0..t)
        .map(|i| {
            let (s, e) = arith.pixels_of_latent(i);
            signal[s..e].iter().sum::<f64>() / (e - s) as f64
        })
        .collect())
}

/// Envelope pooled to latent rate; this is exactly the ground-truth mouth track.
pub fn latent_envelope(audio: &AudioTrack, arith: &FrameArithmetic) -> Result<Vec<f64>> {
    let env: Vec<f64> = audio.envelope().iter().map(|&e| e as f64).collect();
    pool_to_latent(&env, arith)
}

/// Pixel-rate gesture impulses: a unit kick along a seeded direction at each
/// upward threshold crossing, decaying geometrically afterwards.
pub fn gesture_signal(envelope: &[f32], actor: &ActorSpec, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E57_0000);
    let thr = actor.gesture_threshold;
    let decay = actor.gesture_decay as f64;
    let mut g = [0.0f64; 2];
    let mut out = Vec::with_capacity(envelope.len());
    for (n, &e) in envelope.iter().enumerate() {
        g = [g[0] * decay, g[1] * decay];
        let onset = e > thr && (n == 0 || envelope[n - 1] <= thr);
        if onset {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            g = [g[0] + a.cos(), g[1] + a.sin()];
        }
        out.push(g);
    }
    out
}

/// Deterministic ground truth for an audio track, an actor, and a camera path.
pub fn simulate_actor(
    audio: &AudioTrack,
    actor: &ActorSpec,
    camera: &CameraTrajectory,
    seed: u64,
) -> Result<LatentVideo> {
    let arith = FrameArithmetic::default();
    let n = audio.len();
    let t = arith.pixel_to_latent(n)?;
    if camera.len() != n {
        return Err(Error::Shape(format!(
            "camera has {} frames, audio has {n}",
            camera.len()
        )));
    }
    actor.validate()?;
    let env: Vec<f64> = audio.envelope().iter().map(|&e| e as f64).collect();

    let mouth = pool_to_latent(&env, &arith)?;

    let mut head = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (ch, &alpha) in HEAD_SMOOTHING.iter().enumerate() {
        let mut h = env[0];
        for i in 0..n {
            let lagged = env[i.saturating_sub(actor.head_lag)];
            h = alpha * h + (1.0 - alpha) * lagged;
            head[ch].push(h - 0.5);
        }
    }
    let head = [pool_to_latent(&head[0], &arith)?, pool_to_latent(&head[1], &arith)?];

    let gest = gesture_signal(audio.envelope(), actor, seed);
    let gest = [
        pool_to_latent(&gest.iter().map(|g| g[0]).collect::<Vec<_>>(), &arith)?,
        pool_to_latent(&gest.iter().map(|g| g[1]).collect::<Vec<_>>(), &arith)?,
    ];

    let cam = camera.offsets();
    let cam = [
        pool_to_latent(&(0..n).map(|i| cam.get(i, 0) as f64).collect::<Vec<_>>(), &arith)?,
        pool_to_latent(&(0..n).map(|i| cam.get(i, 1) as f64).collect::<Vec<_>>(), &arith)?,
    ];

    let style = ChaCha8Rng::seed_from_u64(seed ^ 0x57_7E00).random_range(-0.8f32..0.8);

    let mut frames = Mat::<f32>::zeros(t, C_LAT);
    for i in 0..t {
        let row = frames.row_mut(i);
        row[factor::MOUTH.start] = mouth[i] as f32;
        row[factor::HEAD.start] = head[0][i] as f32;
        row[factor::HEAD.start + 1] = head[1][i] as f32;
        row[factor::GESTURE.start] = gest[0][i] as f32;
        row[factor::GESTURE.start + 1] = gest[1][i] as f32;
        row[factor::IDENTITY].copy_from_slice(&actor.identity_code);
        row[factor::CAMERA.start] = cam[0][i] as f32;
        row[factor::CAMERA.start + 1] = cam[1][i] as f32;
        row[factor::STYLE.start] = style;
    }
    LatentVideo::new(frames)
}
