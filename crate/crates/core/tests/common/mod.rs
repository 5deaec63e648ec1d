#![allow(dead_code)]

use std::path::PathBuf;

use bspc_core::raster::read_image;
use bspc_core::GrayImage;

/// `BSPC_CAMERAMAN`, else `testdata/cameraman.pgm` at the workspace root.
pub fn cameraman_path() -> PathBuf {
    std::env::var_os("BSPC_CAMERAMAN").map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/cameraman.pgm"),
        PathBuf::from,
    )
}

pub fn cameraman() -> Result<GrayImage, String> {
    let path = cameraman_path();
    let img = read_image(&path)
        .map_err(|e| format!("{e} (run scripts/make_cameraman.py or set BSPC_CAMERAMAN)"))?;
    if (img.width(), img.height()) != (256, 256) {
        return Err(format!(
            "{} is {}x{}, expected 256x256",
            path.display(),
            img.width(),
            img.height()
        ));
    }
    Ok(img)
}
