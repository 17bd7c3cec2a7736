//! Chunk-by-chunk dubbing in streaming, I2V, and FL2V modes.
//!
//! Every chunk after the first is generated over a 21-frame latent window whose
//! first three frames are the last three frames already emitted, so the final
//! right-aligned chunk simply emits fewer new frames. Audio tokens past the end
//! of the source repeat the last row; frames generated there are discarded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian, ode_solve, sdedit_init, DubMode, SamplerConfig, VelocityField};
use crate::conditioning::{assemble_conditioning, assemble_with_references, ConditioningBundle, Context};
use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;
use crate::latent::LatentVideo;
use crate::model::audio_align::align_audio_with;
use crate::plan::{build_chunk_plan, ChunkPlan, Span};
use crate::seed;
use crate::tensor::Mat;
use crate::world::AudioTrack;

#[derive(Clone, Debug)]
pub struct DubRequest {
    source: LatentVideo,
    audio: AudioTrack,
    plan: ChunkPlan,
}

impl DubRequest {
    pub fn new(source: LatentVideo, audio: AudioTrack) -> Result<Self> {
        Self::with_arith(source, audio, &FrameArithmetic::default())
    }

    pub fn with_arith(source: LatentVideo, audio: AudioTrack, arith: &FrameArithmetic) -> Result<Self> {
        let px = source.pixel_len(arith);
        if audio.len() != px {
            return Err(Error::Shape(format!(
                "audio has {} frames but the source video spans {px}",
                audio.len()
            )));
        }
        let plan = build_chunk_plan(px, arith)?;
        Ok(Self { source, audio, plan })
    }

    pub fn source(&self) -> &LatentVideo {
        &self.source
    }

    pub fn audio(&self) -> &AudioTrack {
        &self.audio
    }

    pub fn plan(&self) -> &ChunkPlan {
        &self.plan
    }
}

/// What one chunk saw and produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkTrace {
    /// Latent window fed to the model.
    pub window: Span,
    /// Latent frames written to the output.
    pub emit: Span,
    /// Clean context frames, absent for the sentinel.
    pub context: Option<Mat<f32>>,
    /// Reference frames in slot order.
    pub references: Mat<f32>,
    /// Temporal slots of the references within the window.
    pub reference_slots: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DubOutput {
    pub video: LatentVideo,
    pub chunks: Vec<ChunkTrace>,
}

fn clamped_rows(m: &Mat<f32>, span: Span) -> Mat<f32> {
    let last = m.rows() - 1;
    let rows: Vec<Vec<f32>> = (span.start..span.end).map(|i| m.row(i.min(last)).to_vec()).collect();
    Mat::from_rows(&rows)
}

/// Run the request in the mode named by `config.mode`.
pub fn dub<F: VelocityField + ?Sized>(request: &DubRequest, field: &F, config: &SamplerConfig) -> Result<DubOutput> {
    config.validate()?;
    let plan = &request.plan;
    let arith = plan.arith;
    let source = request.source.frames();
    let len = source.rows();
    let c = source.cols();
    let t_c = arith.context_latent_len();
    let chunk_lat = arith.chunk_latent_len();
    if plan.total_latent_frames() != len {
        return Err(Error::Shape(format!(
            "plan covers {} latent frames, source has {len}",
            plan.total_latent_frames()
        )));
    }
    let tokens = align_audio_with(&request.audio, len, field.audio_window(), &arith)?;
    let mut out = Mat::zeros(len, c);
    let mut traces = Vec::with_capacity(plan.len());

    for (k, chunk) in plan.chunks.iter().enumerate() {
        let emit = chunk.emit_latent_span;
        let ws = if k == 0 { 0 } else { emit.start - t_c };
        let window = Span::new(ws, ws + chunk_lat);
        let win_tokens = clamped_rows(&tokens, window);
        let win_source = clamped_rows(source, window);
        let key_ref = source.row(arith.latent_index_of_pixel(chunk.reference_pixel_index));

        let context = (k > 0 && config.mode != DubMode::Fl2v).then(|| out.slice_rows(ws, ws + t_c));
        let (bundle, slots): (ConditioningBundle, Vec<usize>) = match (&context, config.mode) {
            (None, DubMode::Fl2v) => {
                let last = chunk_lat - 1;
                let refs = [(0, win_source.row(0)), (last, win_source.row(last))];
                let b = assemble_with_references(&Mat::zeros(chunk_lat, c), Context::Empty { t_c }, &refs, field.m_ch())?;
                (b, vec![0, last])
            }
            (None, _) => (
                assemble_conditioning(&Mat::zeros(chunk_lat, c), Context::Empty { t_c }, key_ref, field.m_ch())?,
                vec![0],
            ),
            (Some(ctx), mode) => {
                let x_ref = if mode == DubMode::I2v { out.row(emit.start - 1) } else { key_ref };
                let b = assemble_conditioning(&Mat::zeros(chunk_lat - t_c, c), Context::Frames(ctx), x_ref, field.m_ch())?;
                (b, vec![0])
            }
        };
        let mut bundle = bundle.with_audio(win_tokens)?;
        let span = bundle.noisy_span();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "chunk", k as u64));
        let (init, t_start) = match config.sdedit_t0 {
            None => (gaussian(span.len(), c, &mut rng), 1.0),
            Some(t0) => {
                let src = win_source.slice_rows(span.start, span.end);
                (sdedit_init(&src, t0 as f32, &mut rng), t0 as f32)
            }
        };
        let x = ode_solve(field, &mut bundle, &init, config.ode_steps, t_start)
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("chunk {k}: {m}")),
                other => other,
            })?;
        for i in emit.start..emit.end {
            out.row_mut(i).copy_from_slice(x.row(i - ws - span.start));
        }
        traces.push(ChunkTrace {
            window,
            emit,
            context,
            references: bundle.references().clone(),
            reference_slots: slots,
        });
    }

    Ok(DubOutput {
        video: LatentVideo::new(out)?,
        chunks: traces,
    })
}

fn with_mode(config: &SamplerConfig, mode: DubMode) -> SamplerConfig {
    SamplerConfig { mode, ..*config }
}

pub fn dub_streaming<F: VelocityField + ?Sized>(r: &DubRequest, f: &F, config: &SamplerConfig) -> Result<DubOutput> {
    dub(r, f, &with_mode(config, DubMode::Streaming))
}

pub fn dub_i2v<F: VelocityField + ?Sized>(r: &DubRequest, f: &F, config: &SamplerConfig) -> Result<DubOutput> {
    dub(r, f, &with_mode(config, DubMode::I2v))
}

pub fn dub_fl2v<F: VelocityField + ?Sized>(r: &DubRequest, f: &F, config: &SamplerConfig) -> Result<DubOutput> {
    dub(r, f, &with_mode(config, DubMode::Fl2v))
}
