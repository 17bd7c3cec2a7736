//! Factor-space evaluation: lip sync, identity drift, seam smoothness,
//! reference replication, and camera preservation.
//!
//! Distances are Euclidean in latent factor units; correlations are dimensionless.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;
use crate::latent::{factor, LatentVideo};
use crate::plan::ChunkPlan;
use crate::sample::{DubOutput, DubRequest};
use crate::world::actor::latent_envelope;
use crate::world::AudioTrack;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncScore {
    pub value: f64,
    /// Some lag had a constant series on either side; its correlation counted as 0.
    pub degenerate: bool,
}

/// Pearson correlation, or `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let denom = (saa * sbb).sqrt();
    (denom > 1e-12).then(|| (sab / denom).clamp(-1.0, 1.0))
}

/// Best Pearson correlation between a latent-rate series and the mouth track
/// over lags `|ℓ| ≤ max_lag`; lag `ℓ` pairs `signal[i]` with `mouth[i + ℓ]`.
pub fn sync_with_signal(video: &LatentVideo, signal: &[f64], max_lag: usize) -> Result<SyncScore> {
    let mouth: Vec<f64> = (0..video.latent_len())
        .map(|i| video.factor(i, factor::MOUTH)[0] as f64)
        .collect();
    if mouth.len() != signal.len() {
        return Err(Error::Shape(format!(
            "video has {} latent frames, audio envelope has {}",
            mouth.len(),
            signal.len()
        )));
    }
    let n = mouth.len() as isize;
    let mut best = f64::NEG_INFINITY;
    let mut degenerate = false;
    for lag in -(max_lag as isize)..=max_lag as isize {
        let lo = 0.max(-lag);
        let hi = n.min(n - lag);
        if hi - lo < 2 {
            continue;
        }
        let a = &signal[lo as usize..hi as usize];
        let b = &mouth[(lo + lag) as usize..(hi + lag) as usize];
        let r = pearson(a, b).unwrap_or_else(|| {
            degenerate = true;
            0.0
        });
        best = best.max(r);
    }
    if !best.is_finite() {
        return Err(Error::TooShort { got: mouth.len(), need: 2 });
    }
    Ok(SyncScore { value: best, degenerate })
}

/// Audio-motion synchronization: envelope pooled to latent rate against the mouth factor.
pub fn sync_score(video: &LatentVideo, audio: &AudioTrack, max_lag: usize) -> Result<SyncScore> {
    let env = latent_envelope(audio, &FrameArithmetic::default())?;
    sync_with_signal(video, &env, max_lag)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub mean: f64,
    pub max: f64,
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-frame distance of the identity factor from `ref_identity`.
pub fn identity_drift(video: &LatentVideo, ref_identity: &[f32]) -> Drift {
    identity_drift_range(video, ref_identity, 0, video.latent_len())
}

fn identity_drift_range(video: &LatentVideo, ref_identity: &[f32], start: usize, end: usize) -> Drift {
    assert_eq!(ref_identity.len(), factor::IDENTITY.len(), "identity has four dims");
    let d: Vec<f64> = (start..end)
        .map(|i| dist(video.factor(i, factor::IDENTITY), ref_identity))
        .collect();
    Drift {
        mean: d.iter().sum::<f64>() / d.len().max(1) as f64,
        max: d.iter().copied().fold(0.0, f64::max),
    }
}

fn second_difference(video: &LatentVideo, i: usize) -> f64 {
    let (a, b, c) = (video.frame(i - 1), video.frame(i), video.frame(i + 1));
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((&a, &b), &c)| ((c - 2.0 * b + a) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Indices whose second difference straddles a seam: the last frame of the
/// previous chunk and the first frame of the next.
fn seam_centers(plan: &ChunkPlan, len: usize) -> Vec<usize> {
    let mut c: Vec<usize> = plan
        .boundary_latent_indices()
        .into_iter()
        .flat_map(|b| [b - 1, b])
        .filter(|&i| i >= 1 && i + 1 < len)
        .collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Mean seam second-difference norm over the mean interior one; 1 means seams are
/// as smooth as everything else.
pub fn boundary_jerk(video: &LatentVideo, plan: &ChunkPlan) -> Result<f64> {
    if plan.len() < 2 {
        return Err(Error::Config("boundary jerk needs at least two chunks".into()));
    }
    let len = video.latent_len();
    if plan.total_latent_frames() != len {
        return Err(Error::Shape(format!(
            "plan covers {} latent frames, video has {len}",
            plan.total_latent_frames()
        )));
    }
    let seams = seam_centers(plan, len);
    let (mut seam, mut interior, mut ni) = (0.0, 0.0, 0usize);
    for i in 1..len - 1 {
        let j = second_difference(video, i);
        if seams.binary_search(&i).is_ok() {
            seam += j;
        } else {
            interior += j;
            ni += 1;
        }
    }
    let seam = seam / seams.len() as f64;
    let interior = interior / ni.max(1) as f64;
    if interior <= 1e-12 {
        return Err(Error::Numerical("interior second differences vanish".into()));
    }
    Ok(seam / interior)
}

/// `exp(−‖video[i] − reference‖)`: 1 for an exact copy, toward 0 for free motion.
pub fn control_strength(video: &LatentVideo, ref_frame: &[f32], ref_latent_index: usize) -> f64 {
    (-dist(video.frame(ref_latent_index), ref_frame)).exp()
}

/// Mean per-frame distance between camera factors.
pub fn camera_error(video: &LatentVideo, source: &LatentVideo) -> Result<f64> {
    if video.latent_len() != source.latent_len() {
        return Err(Error::Shape(format!(
            "lengths differ: {} vs {}",
            video.latent_len(),
            source.latent_len()
        )));
    }
    let n = video.latent_len();
    Ok((0..n)
        .map(|i| dist(video.factor(i, factor::CAMERA), source.factor(i, factor::CAMERA)))
        .sum::<f64>()
        / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub index: usize,
    pub identity_drift_mean: f64,
    /// Replication of the chunk reference at the chunk's last frame; absent when that
    /// frame was discarded past the end of the source.
    pub control_strength: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DubReport {
    pub sync_corr: f64,
    pub sync_degenerate: bool,
    pub identity_drift_mean: f64,
    pub identity_drift_max: f64,
    /// Absent for single-chunk runs.
    pub boundary_jerk_ratio: Option<f64>,
    pub control_strength: f64,
    pub camera_error: f64,
    pub chunks: Vec<ChunkReport>,
}

pub const SYNC_MAX_LAG: usize = 2;

/// Score a dubbing run against its request.
pub fn evaluate(request: &DubRequest, output: &DubOutput) -> Result<DubReport> {
    let video = &output.video;
    let source = request.source();
    let sync = sync_score(video, request.audio(), SYNC_MAX_LAG)?;
    let ref_identity = source.factor(0, factor::IDENTITY);
    let drift = identity_drift(video, ref_identity);
    let jerk = if request.plan().len() >= 2 {
        Some(boundary_jerk(video, request.plan())?)
    } else {
        None
    };
    let chunks: Vec<ChunkReport> = output
        .chunks
        .iter()
        .enumerate()
        .map(|(k, tr)| ChunkReport {
            index: k,
            identity_drift_mean: identity_drift_range(video, ref_identity, tr.emit.start, tr.emit.end).mean,
            control_strength: (tr.emit.end == tr.window.end)
                .then(|| control_strength(video, tr.references.row(0), tr.emit.end - 1)),
        })
        .collect();
    let cs: Vec<f64> = chunks.iter().filter_map(|c| c.control_strength).collect();
    let report = DubReport {
        sync_corr: sync.value,
        sync_degenerate: sync.degenerate,
        identity_drift_mean: drift.mean,
        identity_drift_max: drift.max,
        boundary_jerk_ratio: jerk,
        control_strength: cs.iter().sum::<f64>() / cs.len().max(1) as f64,
        camera_error: camera_error(video, source)?,
        chunks,
    };
    if ![
        report.sync_corr,
        report.identity_drift_mean,
        report.identity_drift_max,
        report.control_strength,
        report.camera_error,
        report.boundary_jerk_ratio.unwrap_or(0.0),
    ]
    .iter()
    .all(|v| v.is_finite())
    {
        return Err(Error::Numerical("non-finite metric in report".into()));
    }
    Ok(report)
}

/// One row of a batch evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: String,
    pub strategy: String,
    pub seed: u64,
    pub sync: f64,
    pub drift: f64,
    pub drift_max: f64,
    pub jerk: f64,
    pub control_strength: f64,
    pub camera_error: f64,
}

impl CsvRow {
    pub fn from_report(mode: impl Into<String>, strategy: impl Into<String>, seed: u64, r: &DubReport) -> Self {
        Self {
            mode: mode.into(),
            strategy: strategy.into(),
            seed,
            sync: r.sync_corr,
            drift: r.identity_drift_mean,
            drift_max: r.identity_drift_max,
            jerk: r.boundary_jerk_ratio.unwrap_or(f64::NAN),
            control_strength: r.control_strength,
            camera_error: r.camera_error,
        }
    }
}

/// Write rows with a header line.
pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}
