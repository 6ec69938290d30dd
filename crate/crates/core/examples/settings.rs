//! Loads TOML settings, overrides a field, and prints the effective file.
//!
//! cargo run --example settings

use std::path::Path;

use ki67::config::Settings;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "min_conf = 0.3\nnms_threshold = 0.45\n\n[overlay]\nstroke = 3\n";
    let mut settings = Settings::from_toml(text, Path::new("inline.toml"))?;
    settings.seed = 17;
    settings.validate()?;
    let scoring = settings.scoring()?;
    println!("scoring: min_conf {} nms {} {:?}", scoring.min_conf, scoring.nms_threshold, scoring.aggregation);
    print!("{}", settings.to_toml());

    let bad = Settings::from_toml("iou_threshold = 1.5\n", Path::new("bad.toml")).and_then(|s| s.validate().map(|_| s));
    println!("out of range: {}", bad.unwrap_err());
    Ok(())
}
