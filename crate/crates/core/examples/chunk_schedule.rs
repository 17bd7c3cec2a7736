//! Print the chunk schedule for a sequence and the conditioning layout of one chunk.
//!
//! `cargo run --example chunk_schedule -- [pixel_frames]`

use dub_engine::conditioning::{assemble_conditioning, Context};
use dub_engine::frames::FrameArithmetic;
use dub_engine::latent::C_LAT;
use dub_engine::plan::build_chunk_plan;
use dub_engine::tensor::Mat;

fn main() -> dub_engine::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .map_or(729, |s| s.parse().expect("pixel_frames must be an integer"));
    let a = FrameArithmetic::default();
    let plan = build_chunk_plan(n, &a)?;
    println!(
        "{n} pixel frames -> {} latent frames in {} chunks (stride {}, chunk {} px / {} latent, context {} px / {} latent)",
        plan.total_latent_frames(),
        plan.len(),
        a.temporal_stride,
        a.chunk_pixel_len,
        a.chunk_latent_len(),
        a.context_pixel_len,
        a.context_latent_len(),
    );
    println!("{:>5} {:>12} {:>12} {:>12} {:>10}", "chunk", "pixels", "emit px", "emit latent", "ref px");
    for (k, c) in plan.chunks.iter().enumerate() {
        println!(
            "{k:>5} {:>12} {:>12} {:>12} {:>10}",
            format!("[{}, {})", c.pixel_span.start, c.pixel_span.end),
            format!("[{}, {})", c.emit_pixel_span.start, c.emit_pixel_span.end),
            format!("[{}, {})", c.emit_latent_span.start, c.emit_latent_span.end),
            c.reference_pixel_index,
        );
    }

    let ctx = Mat::filled(a.context_latent_len(), C_LAT, 0.5f32);
    let x_t = Mat::filled(a.new_latent_len(), C_LAT, -1.0f32);
    let b = assemble_conditioning(&x_t, Context::Frames(&ctx), &[1.0; C_LAT], 1)?;
    println!("\nz is [{} x {}]: context rows 0..{}, noisy rows {}..{}", b.z().rows(), b.z().cols(), b.context_len(), b.noisy_span().start, b.noisy_span().end);
    println!("{:>4}  {:>6} {:>6} {:>4}", "row", "z1[0]", "z2[0]", "m");
    for i in 0..b.len() {
        let row = b.z().row(i);
        println!("{i:>4}  {:>6.2} {:>6.2} {:>4}", row[0], row[C_LAT], row[2 * C_LAT]);
    }
    Ok(())
}
