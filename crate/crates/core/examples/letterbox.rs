//! Maps boxes between an original field and the 640x640 letterboxed frame a
//! detector sees.
//!
//! cargo run --example letterbox

use ki67::predictions::{letterbox_box, letterbox_image, letterbox_map, unletterbox};
use ki67::raster::RasterImage;
use ki67::BoundingBox;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let img = RasterImage::filled(1280, 960, [180, 160, 200])?;
    let spec = letterbox_map(img.width(), img.height());
    println!(
        "scale {:.3}, scaled {}x{}, pad left {} top {}",
        spec.scale, spec.scaled_width, spec.scaled_height, spec.pad_left, spec.pad_top
    );
    let framed = letterbox_image(&img, &spec);
    println!("letterboxed {}x{}, corner pixel {:?}", framed.width(), framed.height(), framed.get(0, 0));

    let b = BoundingBox::new(400.0, 300.0, 440.0, 350.0)?;
    let inside = letterbox_box(&b, &spec);
    println!("{b} -> {inside} -> {}", unletterbox(&inside, &spec).unwrap());
    let padding_only = BoundingBox::new(10.0, 2.0, 30.0, 20.0)?;
    println!("box in the padding maps back to {:?}", unletterbox(&padding_only, &spec));
    Ok(())
}
