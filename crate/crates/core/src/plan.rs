//! Deterministic chunk schedule for long-sequence generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    None,
    PreviousOutput,
}

/// Half-open index range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub pixel_span: Span,
    pub latent_span: Span,
    pub context_source: ContextSource,
    pub reference_pixel_index: usize,
    /// Pixel frames this chunk contributes to the output; the rest overlaps earlier chunks.
    pub emit_pixel_span: Span,
    /// Latent frames this chunk contributes to the output.
    pub emit_latent_span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunks: Vec<Chunk>,
    pub total_pixel_frames: usize,
    pub arith: FrameArithmetic,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// First emitted latent index of every chunk after the first.
    pub fn boundary_latent_indices(&self) -> Vec<usize> {
        self.chunks
            .iter()
            .skip(1)
            .map(|c| c.emit_latent_span.start)
            .collect()
    }

    /// Total latent frames emitted across the plan.
    pub fn total_latent_frames(&self) -> usize {
        self.chunks.last().map_or(0, |c| c.emit_latent_span.end)
    }
}

/// Chunk 0 covers `[0, chunk)`, chunk `k` starts at `k·(chunk − context)`, and the
/// final chunk is right-aligned to end at `total_pixel_frames`.
pub fn build_chunk_plan(total_pixel_frames: usize, arith: &FrameArithmetic) -> Result<ChunkPlan> {
    arith.validate()?;
    let chunk = arith.chunk_pixel_len;
    if total_pixel_frames < chunk {
        return Err(Error::TooShort {
            got: total_pixel_frames,
            need: chunk,
        });
    }
    let step = arith.new_pixels_per_chunk();
    let chunk_lat = arith.chunk_latent_len();

    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        if s + chunk >= total_pixel_frames {
            starts.push(total_pixel_frames - chunk);
            break;
        }
        starts.push(s);
        s += step;
    }

    let mut chunks = Vec::with_capacity(starts.len());
    let mut emitted_to = 0;
    for (k, &start) in starts.iter().enumerate() {
        let end = start + chunk;
        let latent_start = start / arith.temporal_stride;
        let emit_latent_start = arith.latent_index_of_pixel(emitted_to);
        chunks.push(Chunk {
            pixel_span: Span::new(start, end),
            latent_span: Span::new(latent_start, latent_start + chunk_lat),
            context_source: if k == 0 {
                ContextSource::None
            } else {
                ContextSource::PreviousOutput
            },
            reference_pixel_index: start,
            emit_pixel_span: Span::new(emitted_to, end),
            emit_latent_span: Span::new(emit_latent_start, latent_start + chunk_lat),
        });
        emitted_to = end;
    }

    Ok(ChunkPlan {
        chunks,
        total_pixel_frames,
        arith: *arith,
    })
}
