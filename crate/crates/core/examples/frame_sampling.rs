//! Pick eight frames from clips of different lengths.
//!
//! `cargo run --example frame_sampling`

use traffic_rag::backend::{sample_frame_indices, select_media, FRAMES_PER_CLIP};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for n in [1, 3, 8, 15, 60, 240] {
        println!("{n:>4} frames -> {:?}", sample_frame_indices(n, FRAMES_PER_CLIP)?);
    }

    let clip: Vec<String> = (0..20).map(|i| format!("clip-042/frame-{i:03}.jpg")).collect();
    println!("\nreferences sent for a 20-frame clip:");
    for r in select_media(&clip, None)? {
        println!("  {r}");
    }
    println!("\nonly the source length known (300 frames):");
    println!("  {:?}", select_media(&[], Some(300))?);
    Ok(())
}
