//! Pixel-frame ↔ latent-frame arithmetic.
//!
//! The latent codec is temporally causal: latent frame 0 encodes pixel frame 0
//! alone, and each later latent frame `i` encodes the `stride` pixel frames
//! `[stride·i − stride + 1, stride·i]`. A clip of `n` pixel frames therefore
//! needs `n ≡ 1 (mod stride)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel frames per latent step.
pub const TEMPORAL_STRIDE: usize = 4;
/// Pixel frames in one generated chunk.
pub const CHUNK_PIXEL_LEN: usize = 81;
/// Pixel frames carried over from the previous chunk.
pub const CONTEXT_PIXEL_LEN: usize = 9;
/// Pixel frame rate of every clip.
pub const FPS: f64 = 25.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameArithmetic {
    pub temporal_stride: usize,
    pub chunk_pixel_len: usize,
    pub context_pixel_len: usize,
}

impl Default for FrameArithmetic {
    fn default() -> Self {
        Self {
            temporal_stride: TEMPORAL_STRIDE,
            chunk_pixel_len: CHUNK_PIXEL_LEN,
            context_pixel_len: CONTEXT_PIXEL_LEN,
        }
    }
}

impl FrameArithmetic {
    pub fn new(temporal_stride: usize, chunk_pixel_len: usize, context_pixel_len: usize) -> Result<Self> {
        let a = Self {
            temporal_stride,
            chunk_pixel_len,
            context_pixel_len,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_stride == 0 {
            return Err(Error::Arithmetic("temporal stride must be positive".into()));
        }
        if !self.is_aligned(self.chunk_pixel_len) {
            return Err(Error::Arithmetic(format!(
                "chunk length {} is not ≡ 1 (mod {})",
                self.chunk_pixel_len, self.temporal_stride
            )));
        }
        if !self.is_aligned(self.context_pixel_len) {
            return Err(Error::Arithmetic(format!(
                "context length {} is not of the form {}·(t_c − 1) + 1",
                self.context_pixel_len, self.temporal_stride
            )));
        }
        if self.context_pixel_len >= self.chunk_pixel_len {
            return Err(Error::Arithmetic(
                "context must be shorter than a chunk".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn is_aligned(&self, n_pixel: usize) -> bool {
        n_pixel >= 1 && (n_pixel - 1).is_multiple_of(self.temporal_stride)
    }

    pub fn pixel_to_latent(&self, n_pixel: usize) -> Result<usize> {
        if !self.is_aligned(n_pixel) {
            return Err(Error::Alignment {
                n: n_pixel,
                stride: self.temporal_stride,
            });
        }
        Ok((n_pixel - 1) / self.temporal_stride + 1)
    }

    /// Panics on `t_lat == 0`.
    pub fn latent_to_pixel(&self, t_lat: usize) -> usize {
        assert!(t_lat >= 1, "latent length must be at least 1");
        self.temporal_stride * (t_lat - 1) + 1
    }

    /// Latent frame whose receptive field contains pixel frame `p`.
    #[inline]
    pub fn latent_index_of_pixel(&self, p: usize) -> usize {
        p.div_ceil(self.temporal_stride)
    }

    /// Pixel frames `[start, end)` pooled into latent frame `i`.
    #[inline]
    pub fn pixels_of_latent(&self, i: usize) -> (usize, usize) {
        if i == 0 {
            (0, 1)
        } else {
            let s = self.temporal_stride;
            (s * i - s + 1, s * i + 1)
        }
    }

    /// `t_c`: context length in latent frames.
    pub fn context_latent_len(&self) -> usize {
        (self.context_pixel_len - 1) / self.temporal_stride + 1
    }

    pub fn chunk_latent_len(&self) -> usize {
        (self.chunk_pixel_len - 1) / self.temporal_stride + 1
    }

    /// `t`: noisy latent frames generated beyond the context.
    pub fn new_latent_len(&self) -> usize {
        self.chunk_latent_len() - self.context_latent_len()
    }

    pub fn new_pixels_per_chunk(&self) -> usize {
        self.chunk_pixel_len - self.context_pixel_len
    }
}

pub fn pixel_to_latent(n_pixel: usize) -> Result<usize> {
    FrameArithmetic::default().pixel_to_latent(n_pixel)
}

pub fn latent_to_pixel(t_lat: usize) -> usize {
    FrameArithmetic::default().latent_to_pixel(t_lat)
}
