pub mod fit;
pub mod fixtures;
pub mod metrics;
pub mod policy;
pub mod query;
pub mod render;
pub mod track;

use std::path::Path;

use semsplat_core::io::{load_image, load_png};
use semsplat_core::{Error, Image};

/// RGB image from a `.png` or `.s2gb` file.
pub fn load_any_image(path: &Path) -> Result<Image, Error> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => load_png(path),
        _ => load_image(path),
    }
}
