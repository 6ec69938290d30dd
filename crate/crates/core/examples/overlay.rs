//! Draws detections over a synthetic field and writes the PNG.
//!
//! cargo run --example overlay -- [OUT.png]

use ki67::fixture::synth_image;
use ki67::reporting::{render_overlay, OverlayStyle};
use ki67::rng::SeededRng;
use ki67::Detection;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("ki67-overlay.png"));
    let (img, truths) = synth_image(&mut SeededRng::new(4), 40, 60);
    let dets: Vec<Detection> = truths
        .iter()
        .enumerate()
        .map(|(i, t)| Detection::new(t.bbox, t.cls, 0.5 + (i % 5) as f64 / 10.0))
        .collect::<Result<_, _>>()?;
    let style = OverlayStyle { show_confidence: true, ..Default::default() };
    render_overlay(&img, &dets, &style).save_png(&out)?;
    println!("{} boxes drawn to {}", dets.len(), out.display());
    Ok(())
}
