//! Where the training reference frame comes from, relative to the training chunk.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::Span;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Uniform over the chunk itself.
    M0,
    /// First or last frame of the chunk.
    M1,
    /// Far from the chunk (beyond `far_min_px`).
    M2,
    /// Just outside the chunk (within `near_radius_px`).
    M3,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::M0, Self::M1, Self::M2, Self::M3];

    pub fn name(self) -> &'static str {
        match self {
            Self::M0 => "m0",
            Self::M1 => "m1",
            Self::M2 => "m2",
            Self::M3 => "m3",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m0" => Ok(Self::M0),
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "m3" => Ok(Self::M3),
            other => Err(Error::Config(format!("unknown strategy {other:?}; expected m0|m1|m2|m3"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStrategy {
    pub kind: StrategyKind,
    /// ≈ 1 s at 25 fps.
    #[serde(default = "default_near")]
    pub near_radius_px: usize,
    /// ≈ 5 s at 25 fps.
    #[serde(default = "default_far")]
    pub far_min_px: usize,
}

fn default_near() -> usize {
    25
}

fn default_far() -> usize {
    125
}

impl ReferenceStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            near_radius_px: default_near(),
            far_min_px: default_far(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.near_radius_px == 0 || self.near_radius_px >= self.far_min_px {
            return Err(Error::Config(format!(
                "need 0 < near_radius_px ({}) < far_min_px ({})",
                self.near_radius_px, self.far_min_px
            )));
        }
        Ok(())
    }

    /// Pixel-frame distance from `p` to the span (0 inside).
    pub fn distance(span: Span, p: usize) -> usize {
        if p < span.start {
            span.start - p
        } else if p >= span.end {
            p - (span.end - 1)
        } else {
            0
        }
    }

    /// Whether `p` is a frame this strategy may return for `span` in a clip of `clip_len` frames.
    pub fn admits(&self, clip_len: usize, span: Span, p: usize) -> bool {
        if p >= clip_len {
            return false;
        }
        match self.kind {
            StrategyKind::M0 => span.contains(p),
            StrategyKind::M1 => p == span.start || p + 1 == span.end,
            StrategyKind::M2 => Self::distance(span, p) > self.far_min_px,
            StrategyKind::M3 => {
                let d = Self::distance(span, p);
                d > 0 && d <= self.near_radius_px
            }
        }
    }

    /// Draw a reference pixel index for a chunk `span` inside a clip.
    pub fn sample<R: Rng + ?Sized>(&self, clip_len: usize, span: Span, rng: &mut R) -> Result<usize> {
        if span.is_empty() || span.end > clip_len {
            return Err(Error::Shape(format!(
                "span {span:?} is not inside a clip of {clip_len} frames"
            )));
        }
        match self.kind {
            StrategyKind::M0 => Ok(rng.random_range(span.start..span.end)),
            StrategyKind::M1 => Ok(if rng.random_bool(0.5) {
                span.start
            } else {
                span.end - 1
            }),
            StrategyKind::M2 => {
                let before = span.start.saturating_sub(self.far_min_px);
                let after_start = (span.end - 1) + self.far_min_px + 1;
                let after = clip_len.saturating_sub(after_start);
                pick_two_ranges(0, before, after_start, after, rng).ok_or_else(|| {
                    Error::Infeasible(format!(
                        "no frame farther than {} px from [{}, {}) in a {clip_len}-frame clip; use longer clips",
                        self.far_min_px, span.start, span.end
                    ))
                })
            }
            StrategyKind::M3 => {
                let lo = span.start.saturating_sub(self.near_radius_px);
                let before = span.start - lo;
                let after_end = (span.end + self.near_radius_px).min(clip_len);
                let after = after_end.saturating_sub(span.end);
                pick_two_ranges(lo, before, span.end, after, rng).ok_or_else(|| {
                    Error::Infeasible(format!(
                        "no frame within {} px outside [{}, {}) in a {clip_len}-frame clip",
                        self.near_radius_px, span.start, span.end
                    ))
                })
            }
        }
    }
}

/// Uniform draw over `[a, a + na) ∪ [b, b + nb)`.
fn pick_two_ranges<R: Rng + ?Sized>(a: usize, na: usize, b: usize, nb: usize, rng: &mut R) -> Option<usize> {
    let total = na + nb;
    if total == 0 {
        return None;
    }
    let k = rng.random_range(0..total);
    Some(if k < na { a + k } else { b + (k - na) })
}
