use std::path::Path;

use voir_core::features::RasterImage;

use crate::error::{Error, Result};

/// Decodes a PNG or PPM/PNM file into 8-bit RGB.
pub fn load_raster(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RasterImage::new(w, h, rgb.into_raw())?)
}

pub fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pnm")
    )
}
