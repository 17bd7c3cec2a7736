//! The factor-vector latent space every clip lives in.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::frames::{FrameArithmetic, FPS};
use crate::tensor::Mat;

/// Channels per latent frame.
pub const C_LAT: usize = 12;

/// Named channel slices of a latent frame.
pub mod factor {
    use std::ops::Range;

    pub const MOUTH: Range<usize> = 0..1;
    pub const HEAD: Range<usize> = 1..3;
    pub const GESTURE: Range<usize> = 3..5;
    pub const IDENTITY: Range<usize> = 5..9;
    pub const CAMERA: Range<usize> = 9..11;
    pub const STYLE: Range<usize> = 11..12;
}

/// Latent video: one factor vector per latent frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    frames: Mat<f32>,
    pub fps_pixel: f64,
}

impl LatentVideo {
    pub fn new(frames: Mat<f32>) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Shape("latent video needs at least one frame".into()));
        }
        if frames.cols() != C_LAT {
            return Err(Error::Shape(format!(
                "latent video has {} channels, expected {C_LAT}",
                frames.cols()
            )));
        }
        if !frames.all_finite() {
            return Err(Error::Numerical("latent video contains non-finite values".into()));
        }
        Ok(Self {
            frames,
            fps_pixel: FPS,
        })
    }

    pub fn frames(&self) -> &Mat<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Mat<f32> {
        self.frames
    }

    pub fn latent_len(&self) -> usize {
        self.frames.rows()
    }

    pub fn pixel_len(&self, arith: &FrameArithmetic) -> usize {
        arith.latent_to_pixel(self.latent_len())
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        self.frames.row(i)
    }

    /// One factor slice of frame `i`.
    pub fn factor(&self, i: usize, slice: Range<usize>) -> &[f32] {
        &self.frames.row(i)[slice]
    }

    /// Factor slice across all frames as `[T × width]`.
    pub fn factor_track(&self, slice: Range<usize>) -> Mat<f32> {
        self.frames.slice_cols(slice.start, slice.end)
    }

    pub fn slice(&self, start: usize, end: usize) -> Mat<f32> {
        self.frames.slice_rows(start, end)
    }
}
