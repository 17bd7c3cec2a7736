use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;
use crate::tensor::Mat;
use crate::world::AudioTrack;

/// Per-latent-frame audio tokens.
///
/// Latent frame `i` mean-pools the features of the pixel frames it covers (frame 0
/// covers pixel 0; frame `i ≥ 1` covers `[4i−3, 4i]`), then concatenates the pooled
/// vectors of frames `i−window ..= i+window`, clamping at the sequence edges.
pub fn align_audio(audio: &AudioTrack, latent_len: usize, window: usize) -> Result<Mat<f32>> {
    align_audio_with(audio, latent_len, window, &FrameArithmetic::default())
}

pub fn align_audio_with(
    audio: &AudioTrack,
    latent_len: usize,
    window: usize,
    arith: &FrameArithmetic,
) -> Result<Mat<f32>> {
    if latent_len == 0 {
        return Err(Error::Shape("latent length must be positive".into()));
    }
    let need = arith.latent_to_pixel(latent_len);
    if audio.len() < need {
        return Err(Error::Shape(format!(
            "audio has {} pixel frames, {latent_len} latent frames need {need}",
            audio.len()
        )));
    }
    let feats = audio.features();
    let d = feats.cols();
    let mut pooled = Mat::<f32>::zeros(latent_len, d);
    for i in 0..latent_len {
        let (s, e) = arith.pixels_of_latent(i);
        let inv = 1.0 / (e - s) as f64;
        for (c, out) in pooled.row_mut(i).iter_mut().enumerate() {
            let sum: f64 = (s..e).map(|p| feats.get(p, c) as f64).sum();
            *out = (sum * inv) as f32;
        }
    }
    let span = 2 * window + 1;
    let mut tokens = Mat::zeros(latent_len, d * span);
    for i in 0..latent_len {
        for (w, off) in (0..span).zip((0..span).map(|w| w * d)) {
            let j = (i + w).saturating_sub(window).min(latent_len - 1);
            tokens.row_mut(i)[off..off + d].copy_from_slice(pooled.row(j));
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{gen_audio, D_AUDIO};

    #[test]
    fn token_shapes() {
        let a = gen_audio(9, 1).unwrap();
        assert_eq!(align_audio(&a, 3, 0).unwrap().shape(), (3, D_AUDIO));
        let a = gen_audio(81, 1).unwrap();
        assert_eq!(align_audio(&a, 21, 2).unwrap().shape(), (21, 40));
    }

    #[test]
    fn constant_audio_gives_identical_rows() {
        let a = AudioTrack::from_envelope(vec![0.6; 41]).unwrap();
        let t = align_audio(&a, 11, 2).unwrap();
        for i in 1..11 {
            assert_eq!(t.row(i), t.row(0));
        }
    }

    #[test]
    fn pooling_and_clamped_window() {
        let a = gen_audio(13, 4).unwrap();
        let t = align_audio(&a, 4, 1).unwrap();
        let f = a.features();
        // Centre slot of frame 0 is pixel 0 alone.
        assert_eq!(&t.row(0)[D_AUDIO..2 * D_AUDIO], f.row(0));
        // Left slot of frame 0 clamps to frame 0.
        assert_eq!(&t.row(0)[..D_AUDIO], f.row(0));
        // Centre slot of frame 2 averages pixels 5..=8.
        for c in 0..D_AUDIO {
            let mean: f64 = (5..9).map(|p| f.get(p, c) as f64).sum::<f64>() / 4.0;
            assert!((t.get(2, D_AUDIO + c) as f64 - mean).abs() < 1e-6);
        }
        // Right slot of the last frame clamps.
        assert_eq!(&t.row(3)[2 * D_AUDIO..], &t.row(3)[D_AUDIO..2 * D_AUDIO]);
    }

    #[test]
    fn short_audio_rejected() {
        let a = gen_audio(8, 1).unwrap();
        assert!(align_audio(&a, 3, 0).is_err());
    }
}
