//! Cartoon rendering of latent frames for visual inspection.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::latent::{factor, LatentVideo};

pub const FRAME_SIZE: u32 = 64;
const DISC_RADIUS: f32 = 14.0;
const MOUTH_COLOR: Rgb<u8> = Rgb([90, 20, 30]);
const HAND_COLOR: Rgb<u8> = Rgb([250, 240, 220]);

/// Head-disc color for an identity code.
pub fn identity_color(identity: &[f32]) -> Rgb<u8> {
    let hue = (identity[1].atan2(identity[0]).to_degrees() + 360.0) % 360.0;
    let value = 0.75 + 0.2 * identity[2].clamp(-1.0, 1.0);
    hsv_to_rgb(hue, 0.75, value)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> Rgb<u8> {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f32| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([q(r), q(g), q(b)])
}

/// Head-disc center in pixel coordinates.
pub fn disc_center(frame: &[f32]) -> (f32, f32) {
    let half = FRAME_SIZE as f32 / 2.0;
    let head = &frame[factor::HEAD];
    let cam = &frame[factor::CAMERA];
    (half + 12.0 * (cam[0] + head[0]), half + 12.0 * (cam[1] + head[1]))
}

/// Draw one latent frame.
pub fn render_frame(frame: &[f32]) -> RgbImage {
    let style = frame[factor::STYLE.start];
    let gray = (128.0 + 60.0 * style).round().clamp(0.0, 255.0) as u8;
    let disc = identity_color(&frame[factor::IDENTITY]);
    let (cx, cy) = disc_center(frame);
    let mouth_h = 5.0 * frame[factor::MOUTH.start].max(0.0);
    let (mx, my) = (cx, cy + 6.0);
    let g = &frame[factor::GESTURE];
    let (hx, hy) = (cx + 18.0 + 6.0 * g[0], cy + 4.0 + 6.0 * g[1]);

    RgbImage::from_fn(FRAME_SIZE, FRAME_SIZE, |x, y| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        if (px - hx).abs() <= 1.5 && (py - hy).abs() <= 1.5 {
            return HAND_COLOR;
        }
        let (dx, dy) = (px - cx, py - cy);
        if dx * dx + dy * dy <= DISC_RADIUS * DISC_RADIUS {
            if mouth_h > 0.0 {
                let (ex, ey) = ((px - mx) / 6.0, (py - my) / mouth_h);
                if ex * ex + ey * ey <= 1.0 {
                    return MOUTH_COLOR;
                }
            }
            return disc;
        }
        Rgb([gray, gray, gray])
    })
}

/// Write every latent frame as `frame_NNNNN.png` under `out_dir`.
pub fn render(video: &LatentVideo, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(video.latent_len());
    for i in 0..video.latent_len() {
        let path = out_dir.join(format!("frame_{i:05}.png"));
        render_frame(video.frame(i)).save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
