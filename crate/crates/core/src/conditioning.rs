//! Channel-concatenated conditioning input `z = [z₁ | z₂ | m]`.
//!
//! `z₁` stacks the clean context frames and the noisy latent along time, `z₂`
//! carries reference frame copies at marked slots and zeros elsewhere, and the
//! mask `m` is one at the marked slots. The audio tokens and reference frames
//! travel alongside for the cross-attention pathways.

use crate::error::{Error, Result};
use crate::plan::Span;
use crate::tensor::Mat;

/// Context frames for a chunk.
#[derive(Clone, Copy, Debug)]
pub enum Context<'a> {
    /// Clean frames from the previous output, `[t_c × C]`.
    Frames(&'a Mat<f32>),
    /// Zero-context sentinel: the `t_c` context slots hold no clean data and are
    /// generated together with the noisy frames.
    Empty { t_c: usize },
}

impl Context<'_> {
    pub fn len(&self) -> usize {
        match self {
            Context::Frames(m) => m.rows(),
            Context::Empty { t_c } => *t_c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_sentinel(&self) -> bool {
        matches!(self, Context::Empty { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    z: Mat<f32>,
    audio_tokens: Mat<f32>,
    references: Mat<f32>,
    noisy_span: Span,
    c_lat: usize,
    m_ch: usize,
    context_len: usize,
    zero_context: bool,
}

/// Standard layout: one reference in slot 0.
///
/// With `Context::Frames`, `x_t` holds the `t` noisy frames. With the
/// zero-context sentinel, `x_t` holds all `t_c + t` frames and the whole
/// sequence is noisy.
pub fn assemble_conditioning(
    x_t: &Mat<f32>,
    context: Context<'_>,
    x_ref: &[f32],
    m_ch: usize,
) -> Result<ConditioningBundle> {
    assemble_with_references(x_t, context, &[(0, x_ref)], m_ch)
}

/// General layout with reference copies at arbitrary temporal slots.
pub fn assemble_with_references(
    x_t: &Mat<f32>,
    context: Context<'_>,
    references: &[(usize, &[f32])],
    m_ch: usize,
) -> Result<ConditioningBundle> {
    let c = x_t.cols();
    if c == 0 {
        return Err(Error::Assembly("latent has zero channels".into()));
    }
    if m_ch == 0 {
        return Err(Error::Assembly("mask needs at least one channel".into()));
    }
    if references.is_empty() {
        return Err(Error::Assembly("at least one reference frame is required".into()));
    }
    let t_c = context.len();
    let (total, noisy_span) = match context {
        Context::Frames(ctx) => {
            if ctx.cols() != c {
                return Err(Error::Assembly(format!(
                    "context has {} channels, noisy latent has {c}",
                    ctx.cols()
                )));
            }
            if x_t.rows() == 0 {
                return Err(Error::Assembly("empty noisy region".into()));
            }
            (t_c + x_t.rows(), Span::new(t_c, t_c + x_t.rows()))
        }
        Context::Empty { t_c } => {
            if x_t.rows() <= t_c {
                return Err(Error::Assembly(format!(
                    "zero-context input needs more than {t_c} frames, got {}",
                    x_t.rows()
                )));
            }
            (x_t.rows(), Span::new(0, x_t.rows()))
        }
    };

    let width = 2 * c + m_ch;
    let mut z = Mat::zeros(total, width);
    match context {
        Context::Frames(ctx) => {
            for i in 0..t_c {
                z.row_mut(i)[..c].copy_from_slice(ctx.row(i));
            }
            for i in 0..x_t.rows() {
                z.row_mut(t_c + i)[..c].copy_from_slice(x_t.row(i));
            }
        }
        Context::Empty { .. } => {
            for i in 0..total {
                z.row_mut(i)[..c].copy_from_slice(x_t.row(i));
            }
        }
    }

    let mut ref_rows = Vec::with_capacity(references.len());
    for &(slot, frame) in references {
        if frame.len() != c {
            return Err(Error::Assembly(format!(
                "reference has {} channels, noisy latent has {c}",
                frame.len()
            )));
        }
        if slot >= total {
            return Err(Error::Assembly(format!(
                "reference slot {slot} outside {total} positions"
            )));
        }
        let row = z.row_mut(slot);
        row[c..2 * c].copy_from_slice(frame);
        row[2 * c..].fill(1.0);
        ref_rows.push(frame.to_vec());
    }

    Ok(ConditioningBundle {
        z,
        audio_tokens: Mat::zeros(total, 0),
        references: Mat::from_rows(&ref_rows),
        noisy_span,
        c_lat: c,
        m_ch,
        context_len: t_c,
        zero_context: context.is_sentinel(),
    })
}

impl ConditioningBundle {
    /// Attach per-position audio tokens.
    pub fn with_audio(mut self, tokens: Mat<f32>) -> Result<Self> {
        if tokens.rows() != self.z.rows() {
            return Err(Error::Assembly(format!(
                "{} audio tokens for {} positions",
                tokens.rows(),
                self.z.rows()
            )));
        }
        self.audio_tokens = tokens;
        Ok(self)
    }

    pub fn z(&self) -> &Mat<f32> {
        &self.z
    }

    pub fn audio_tokens(&self) -> &Mat<f32> {
        &self.audio_tokens
    }

    /// Reference frames, one row per marked slot.
    pub fn references(&self) -> &Mat<f32> {
        &self.references
    }

    pub fn noisy_span(&self) -> Span {
        self.noisy_span
    }

    pub fn c_lat(&self) -> usize {
        self.c_lat
    }

    pub fn m_ch(&self) -> usize {
        self.m_ch
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn is_zero_context(&self) -> bool {
        self.zero_context
    }

    pub fn z1(&self) -> Mat<f32> {
        self.z.slice_cols(0, self.c_lat)
    }

    pub fn z2(&self) -> Mat<f32> {
        self.z.slice_cols(self.c_lat, 2 * self.c_lat)
    }

    pub fn mask(&self) -> Mat<f32> {
        self.z.slice_cols(2 * self.c_lat, 2 * self.c_lat + self.m_ch)
    }

    /// Current noisy frames `[noisy_len × C]`.
    pub fn noisy(&self) -> Mat<f32> {
        self.z1()
            .slice_rows(self.noisy_span.start, self.noisy_span.end)
    }

    /// Overwrite the noisy frames in place; context and conditions stay fixed.
    pub fn set_noisy(&mut self, x: &Mat<f32>) {
        assert_eq!(
            x.shape(),
            (self.noisy_span.len(), self.c_lat),
            "set_noisy: shape mismatch"
        );
        for i in 0..x.rows() {
            let r = self.noisy_span.start + i;
            self.z.row_mut(r)[..self.c_lat].copy_from_slice(x.row(i));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(rows: usize, cols: usize, base: f32) -> Mat<f32> {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| base + i as f32 * 0.01).collect(),
        )
    }

    #[test]
    fn standard_shape() {
        let ctx = ramp(3, 12, 1.0);
        let x_t = ramp(18, 12, -1.0);
        let x_ref = vec![0.5; 12];
        let b = assemble_conditioning(&x_t, Context::Frames(&ctx), &x_ref, 1).unwrap();
        assert_eq!(b.z().shape(), (21, 25));
        assert_eq!(b.noisy_span(), Span::new(3, 21));
        assert_eq!(b.mask().data().iter().sum::<f32>(), 1.0);
        assert_eq!(b.mask().get(0, 0), 1.0);
        let z2 = b.z2();
        assert_eq!(z2.row(0), x_ref.as_slice());
        assert!(z2.data()[12..].iter().all(|&v| v == 0.0));
        assert_eq!(b.z1().slice_rows(0, 3), ctx);
        assert_eq!(b.noisy(), x_t);
    }

    #[test]
    fn empty_noisy_region_is_rejected() {
        let ctx = ramp(3, 12, 0.0);
        let x_t = Mat::zeros(0, 12);
        assert!(assemble_conditioning(&x_t, Context::Frames(&ctx), &[0.0; 12], 1).is_err());
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let ctx = ramp(3, 11, 0.0);
        let x_t = ramp(18, 12, 0.0);
        assert!(matches!(
            assemble_conditioning(&x_t, Context::Frames(&ctx), &[0.0; 12], 1),
            Err(Error::Assembly(_))
        ));
        let ctx = ramp(3, 12, 0.0);
        assert!(assemble_conditioning(&x_t, Context::Frames(&ctx), &[0.0; 11], 1).is_err());
    }

    #[test]
    fn reference_copy_is_bitwise() {
        let ctx = ramp(3, 12, 0.3);
        let x_t = ramp(18, 12, 0.7);
        let b = assemble_conditioning(&x_t, Context::Frames(&ctx), ctx.row(0), 1).unwrap();
        let (z1, z2) = (b.z1(), b.z2());
        for (a, c) in z1.row(0).iter().zip(z2.row(0)) {
            assert_eq!(a.to_bits(), c.to_bits());
        }
    }

    #[test]
    fn zero_context_sentinel_makes_everything_noisy() {
        let x_t = ramp(21, 12, 0.0);
        let b = assemble_conditioning(&x_t, Context::Empty { t_c: 3 }, &[1.0; 12], 4).unwrap();
        assert!(b.is_zero_context());
        assert_eq!(b.noisy_span(), Span::new(0, 21));
        assert_eq!(b.z().shape(), (21, 28));
        assert_eq!(b.mask().data().iter().sum::<f32>(), 4.0);
        let short = ramp(3, 12, 0.0);
        assert!(assemble_conditioning(&short, Context::Empty { t_c: 3 }, &[1.0; 12], 1).is_err());
    }

    #[test]
    fn two_reference_slots() {
        let x_t = ramp(21, 12, 0.0);
        let (a, b) = ([1.0f32; 12], [2.0f32; 12]);
        let bundle =
            assemble_with_references(&x_t, Context::Empty { t_c: 3 }, &[(0, &a), (20, &b)], 1)
                .unwrap();
        assert_eq!(bundle.mask().data().iter().sum::<f32>(), 2.0);
        assert_eq!(bundle.z2().row(20), &b);
        assert_eq!(bundle.references().shape(), (2, 12));
    }

    #[test]
    fn set_noisy_leaves_context() {
        let ctx = ramp(3, 12, 1.0);
        let x_t = ramp(5, 12, 0.0);
        let mut b = assemble_conditioning(&x_t, Context::Frames(&ctx), &[0.0; 12], 1).unwrap();
        let y = Mat::filled(5, 12, 9.0);
        b.set_noisy(&y);
        assert_eq!(b.noisy(), y);
        assert_eq!(b.z1().slice_rows(0, 3), ctx);
    }

    proptest! {
        #[test]
        fn shape_and_mask_for_any_length(t in 1usize..=40, m_ch in 1usize..=4, seed in 0u32..1000) {
            let ctx = ramp(3, 12, seed as f32 * 0.001);
            let x_t = ramp(t, 12, -(seed as f32) * 0.002);
            let x_ref: Vec<f32> = (0..12).map(|i| 0.1 + i as f32).collect();
            let b = assemble_conditioning(&x_t, Context::Frames(&ctx), &x_ref, m_ch).unwrap();
            prop_assert_eq!(b.z().shape(), (t + 3, 24 + m_ch));
            let mask = b.mask();
            prop_assert_eq!(mask.data().iter().sum::<f32>(), m_ch as f32);
            prop_assert!(mask.row(0).iter().all(|&v| v == 1.0));
            let z2 = b.z2();
            for i in 1..t + 3 {
                prop_assert!(z2.row(i).iter().all(|&v| v == 0.0));
            }
            let again = assemble_conditioning(&x_t, Context::Frames(&ctx), &x_ref, m_ch).unwrap();
            prop_assert_eq!(b, again);
        }
    }
}
